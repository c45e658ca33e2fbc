"""Monte Carlo of SiPM photon-number measurements, from light source to noise reduction factor."""
__version__ = "0.1.0"

from .config import PRESETS, ExperimentConfig, load_config, preset
from .correlation import (NRFCurve, NRFModelParams, fit_model, model_R_balanced, model_R_general,
                          noise_reduction)
from .detector import DetectorConfig, count_in_gate, detect, detect_batch, mean_k
from .errors import ConfigError, DegenerateSpectrum, FitFailed, InvalidParameters, SipmSimError, UndefinedR
from .extraction import ExtractionConfig, Method, extract
from .sources import BeamSplitterSpec, LightKind, LightStateSpec, sample_photons
from .spectrum import analyze_spectrum, linearity_check
from .waveform import AmplifierConfig, CellPulseParams, DigitizerConfig

__all__ = [
    "PRESETS", "ExperimentConfig", "load_config", "preset", "NRFCurve", "NRFModelParams", "fit_model",
    "model_R_balanced", "model_R_general", "noise_reduction", "DetectorConfig", "count_in_gate", "detect",
    "detect_batch", "mean_k", "ConfigError", "DegenerateSpectrum", "FitFailed", "InvalidParameters",
    "SipmSimError", "UndefinedR", "ExtractionConfig", "Method", "extract", "BeamSplitterSpec", "LightKind",
    "LightStateSpec", "sample_photons", "analyze_spectrum", "linearity_check", "AmplifierConfig",
    "CellPulseParams", "DigitizerConfig",
]
