"""Photon-number statistics of the light states used in the experiments.

All samplers take an explicit ``numpy.random.Generator`` and accept a
``size`` argument so whole blocks of shots are drawn in one call.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class LightKind(str, enum.Enum):
    COHERENT = "Coherent"
    THERMAL = "Thermal"
    MULTI_THERMAL = "MultiThermal"
    TWIN_BEAM = "TwinBeam"


@dataclass(frozen=True)
class LightStateSpec:
    """Light state feeding the detectors.

    ``mean_photons`` is photons per pulse; for ``TwinBeam`` it is the
    per-arm mean (pairs per pulse). ``modes`` is the number of thermal
    modes and must be 1 for ``Coherent`` and ``Thermal``.
    """

    kind: LightKind
    mean_photons: float
    modes: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", LightKind(self.kind))
        if not np.isfinite(self.mean_photons) or self.mean_photons < 0:
            raise ValueError(f"mean_photons must be >= 0, got {self.mean_photons}")
        if int(self.modes) != self.modes or self.modes < 1:
            raise ValueError(f"modes must be a positive integer, got {self.modes}")
        object.__setattr__(self, "modes", int(self.modes))
        if self.kind in (LightKind.COHERENT, LightKind.THERMAL) and self.modes != 1:
            raise ValueError(f"{self.kind.value} light requires modes == 1")

    def with_mean(self, mean_photons: float) -> "LightStateSpec":
        return LightStateSpec(self.kind, mean_photons, self.modes)


@dataclass(frozen=True)
class BeamSplitterSpec:
    transmittance: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.transmittance <= 1.0:
            raise ValueError(f"transmittance must lie in [0, 1], got {self.transmittance}")


@dataclass(frozen=True)
class ShotPhotons:
    """Per-shot photon numbers in the two arms (``n2`` is None for one arm)."""

    n1: np.ndarray
    n2: np.ndarray | None = None


def sample_photons(spec: LightStateSpec, rng: np.random.Generator, size=None):
    """Draw total photon numbers for ``spec``.

    Coherent light is Poissonian. Thermal and multi-thermal light are drawn
    as a Poisson variate whose intensity is gamma distributed with shape
    ``modes`` and scale ``mean/modes``, which is exactly the negative
    binomial law with Fano factor ``1 + mean/modes``.
    """
    m = spec.mean_photons
    if m == 0:
        return np.zeros(size, dtype=np.int64) if size is not None else 0
    if spec.kind is LightKind.COHERENT:
        return rng.poisson(m, size=size)
    intensity = rng.gamma(spec.modes, m / spec.modes, size=size)
    return rng.poisson(intensity)


def split_at_bs(n, bs: BeamSplitterSpec, rng: np.random.Generator) -> ShotPhotons:
    """Route each photon independently to port 1 with probability ``transmittance``."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("photon numbers must be nonnegative")
    n1 = rng.binomial(n, bs.transmittance)
    return ShotPhotons(n1=n1, n2=n - n1)


def sample_twin_beam(spec: LightStateSpec, rng: np.random.Generator, size=None) -> ShotPhotons:
    """Perfectly number-correlated twin beam: both arms carry the same ``n``."""
    if spec.kind is not LightKind.TWIN_BEAM:
        raise ValueError(f"sample_twin_beam needs a TwinBeam spec, got {spec.kind.value}")
    n = np.asarray(sample_photons(spec, rng, size=size))
    return ShotPhotons(n1=n, n2=n.copy())


def analytic_moments(spec: LightStateSpec) -> tuple[float, float]:
    """Mean and variance of the (per-arm) photon number."""
    m = float(spec.mean_photons)
    if spec.kind is LightKind.COHERENT:
        return m, m
    if spec.kind is LightKind.THERMAL:
        return m, m + m * m
    return m, m + m * m / spec.modes


def multithermal_pmf(n_max: int, mean: float, modes: int) -> np.ndarray:
    """Negative-binomial photon-number distribution truncated at ``n_max``."""
    from scipy.stats import nbinom

    p = modes / (modes + mean)
    return nbinom.pmf(np.arange(n_max + 1), modes, p)
