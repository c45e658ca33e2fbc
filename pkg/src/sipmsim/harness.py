"""Named experiments: configs in, CSV/JSON artifacts and a run manifest out."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, from_flat
from .correlation import TIED, NRFCurve, NRFModelParams, fit_model, fit_report, imbalance_bounds
from .detector import effective_crosstalk, mean_dark, mean_k, mean_n_for_k
from .errors import ConfigError, DegenerateSpectrum
from .extraction import ExtractionConfig, Method
from .simulate import block_rng, render_traces, simulate_outputs, simulate_R_curve
from .sources import LightKind, sample_photons
from .spectrum import (PulseHeightSpectrum, analyze_spectrum, build_phs, linearity_check, spectrum_csv,
                       zero_position)
from .waveform import write_waveform_records

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
COHERENT_MU = 1e12  # a coherent beam behaves as infinitely many modes


def code_version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:
        from . import __version__
        return __version__


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Config echo, code version, time stamp and a checksum per input and output file."""

    command: str
    config: dict
    version: str = field(default_factory=code_version)
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())
    outputs: dict[str, str] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    notices: list[str] = field(default_factory=list)

    def add(self, path: Path) -> None:
        self.outputs[path.name] = sha256_file(path)

    def write(self, out_dir: Path) -> Path:
        if getattr(self, "_written", False):
            raise RuntimeError("manifest already written for this run")
        path = Path(out_dir) / MANIFEST
        path.write_text(json.dumps(asdict(self), indent=2, default=_json_default) + "\n")
        self._written = True
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        return cls(**d)

    def rebuild_config(self) -> ExperimentConfig:
        return from_flat(self.config)


@dataclass
class RunResult:
    out_dir: Path
    manifest: RunManifest
    spectra: dict[str, PulseHeightSpectrum] = field(default_factory=dict)
    curve: NRFCurve | None = None
    fit: object = None
    degenerate: list[str] = field(default_factory=list)


def _out_dir(cfg: ExperimentConfig, out_dir) -> Path:
    p = Path(out_dir if out_dir is not None else cfg.outputs)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# ----------------------------------------------------------------------------- helpers

def extractions_of(cfg: ExperimentConfig) -> list[ExtractionConfig]:
    """The configured extraction, repeated over ``gate_sweep`` widths when given."""
    if not cfg.gate_sweep:
        return [cfg.extraction]
    return [replace(cfg.extraction, width=float(w)) for w in cfg.gate_sweep]


def count_mode(cfg: ExperimentConfig, extraction: ExtractionConfig | None = None) -> tuple[str, float]:
    """Cross-talk mode and dark-count window for the analytic mean of an extraction."""
    e = extraction or cfg.extraction
    if e.method is Method.GATED_INTEGRAL:
        return "integral", e.width
    return "peak", cfg.coincidence_window


def source_means(cfg: ExperimentConfig) -> list[float]:
    """Source mean photon numbers realising the ``sweep`` targets of arm-1 detections."""
    if cfg.sweep is None:
        return [cfg.state.mean_photons]
    mode, gate = count_mode(cfg)
    share = 1.0 if cfg.twin_beam else cfg.splitter.transmittance
    if share == 0:
        raise ConfigError("splitter.transmittance", "arm 1 receives no light")
    out = []
    for k in cfg.sweep:
        try:
            out.append(mean_n_for_k(k, cfg.detector1, gate, mode) / share)
        except ValueError as exc:
            raise ConfigError("sweep", str(exc)) from None
    return out


def model_params(cfg: ExperimentConfig) -> NRFModelParams:
    """Analytic R-model parameters implied by a config, with ``fit.fixed`` overrides."""
    mode, gate = count_mode(cfg)
    d1, d2 = cfg.detector1, cfg.detector2
    kind = cfg.state.kind
    mu = {LightKind.COHERENT: COHERENT_MU, LightKind.THERMAL: 1.0}.get(kind, float(cfg.state.modes))
    ref = source_means(cfg)[0]
    if cfg.twin_beam:
        n1 = n2 = ref
    else:
        n1, n2 = ref * cfg.splitter.transmittance, ref * (1 - cfg.splitter.transmittance)
    k1, k2 = mean_k(n1, d1, gate, mode), mean_k(n2, d2, gate, mode)
    t = float(min(k2 / k1, 1.0)) if k1 > 0 else 1.0
    p = NRFModelParams(mu=mu, eta1=d1.eta, eta2=d2.eta,
                       eps1=float(effective_crosstalk(d1, gate, mode)), eps2=float(effective_crosstalk(d2, gate, mode)),
                       m1dc=mean_dark(d1, gate), m2dc=mean_dark(d2, gate), t=t, quantum=cfg.twin_beam)
    upd = {}
    for name, v in cfg.fit.fixed:
        for target in TIED.get(name, (name,)):
            upd[target] = v
    try:
        return replace(p, **upd)
    except (TypeError, ValueError) as exc:
        raise ConfigError("fit.fixed", str(exc)) from None


def _spectrum_metadata(phs: PulseHeightSpectrum, extraction: ExtractionConfig) -> dict:
    meta = phs.metadata()
    meta["extraction"] = extraction.label
    meta["zero_position"] = float(zero_position(phs.peak_positions, phs.gamma_bar))
    meta["knee"] = linearity_check(phs.gamma_series) if phs.gamma_series.size >= 3 else None
    return meta


def _fallback_spectrum(x) -> PulseHeightSpectrum:
    x = np.asarray(x, dtype=float)
    span = float(x.max() - x.min())
    return build_phs(x, span / 512 if span > 0 else 1.0)


# ----------------------------------------------------------------------------- runs

def run_phs(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Full chain on arm 1; one spectrum CSV and metadata JSON per extraction.

    A spectrum with fewer than two peaks is still written, with a notice in
    its metadata instead of gamma and visibility; it is listed in
    ``RunResult.degenerate``.
    """
    out = _out_dir(cfg, out_dir)
    man = RunManifest("phs", cfg.to_flat())
    res = RunResult(out, man)
    extractions = extractions_of(cfg)
    xs = simulate_outputs(cfg.state, cfg.detector1, cfg.chain, extractions, cfg.shots, cfg.seed, cfg.threads)
    for j, e in enumerate(extractions):
        x = xs[e.label]
        try:
            phs = analyze_spectrum(x, rng=block_rng(cfg.seed, 1 << 21, j), n_bootstrap=cfg.n_bootstrap)
            meta = _spectrum_metadata(phs, e)
            log.info("%s: %d peaks, v = %.3f +- %.3f", e.label, len(phs.peaks), phs.visibility,
                     phs.visibility_err)
        except DegenerateSpectrum as exc:
            phs = _fallback_spectrum(x)
            notice = f"{e.label}: degenerate spectrum, visibility undefined ({exc})"
            meta = {**phs.metadata(), "extraction": e.label, "notice": notice}
            man.notices.append(notice)
            res.degenerate.append(e.label)
            log.warning(notice)
        res.spectra[e.label] = phs
        csv_path = out / f"phs_{e.label}.csv"
        with open(csv_path, "w") as fh:
            spectrum_csv(phs, fh)
        man.add(csv_path)
        man.add(_write_json(out / f"phs_{e.label}.json", meta))
    man.write(out)
    return res


def _nrf(cfg: ExperimentConfig, out_dir, path: str) -> RunResult:
    out = _out_dir(cfg, out_dir)
    man = RunManifest("nrf" if path == "full" else "fastpath", cfg.to_flat())
    res = RunResult(out, man)
    curve = simulate_R_curve(cfg.state, None if cfg.twin_beam else cfg.splitter, cfg.detector1, cfg.detector2,
                             cfg.extraction, cfg.shots, source_means(cfg), seed=cfg.seed, path=path,
                             chain=cfg.chain, threads=cfg.threads, coincidence_window=cfg.coincidence_window,
                             rounding=cfg.rounding, n_bootstrap=max(cfg.n_bootstrap, 2))
    res.curve = curve
    name = "nrf.csv" if path == "full" else "nrf_fastpath.csv"
    with open(out / name, "w") as fh:
        curve.to_csv(fh)
    man.add(out / name)
    if path == "full" and cfg.fit.free:
        res.fit = _fit_and_report(curve, cfg, out, man)
    man.write(out)
    return res


def _fit_and_report(curve: NRFCurve, cfg: ExperimentConfig, out: Path, man: RunManifest):
    # a free imbalance stays near the measured arm ratio
    bounds = {"t": imbalance_bounds(curve)} if "t" in cfg.fit.free else None
    result = fit_model(curve, cfg.fit.free, bounds=bounds, fixed=model_params(cfg), restarts=cfg.fit.restarts,
                       rng=block_rng(cfg.seed, 1 << 22))
    with open(out / "fit.json", "w") as fh:
        fit_report(result, fh)
    man.add(out / "fit.json")
    return result


def run_nrf(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """R curve through the full waveform chain, then the optional fit."""
    return _nrf(cfg, out_dir, "full")


def run_fastpath(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """R curve from avalanche counts, skipping waveforms."""
    return _nrf(cfg, out_dir, "fast")


def run_fit(curve_csv, cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Fit an externally supplied NRF curve CSV."""
    if not cfg.fit.free:
        raise ConfigError("fit.free", "no free parameters given")
    out = _out_dir(cfg, out_dir)
    man = RunManifest("fit", cfg.to_flat())
    with open(curve_csv) as fh:
        curve = NRFCurve.from_csv(fh)
    man.inputs[Path(curve_csv).name] = sha256_file(curve_csv)
    res = RunResult(out, man, curve=curve)
    res.fit = _fit_and_report(curve, cfg, out, man)
    man.write(out)
    return res


def dump_waveforms(cfg: ExperimentConfig, out_dir=None, max_shots: int = 1000) -> RunResult:
    """Binary dump of arm-1 digitized traces for the first ``min(shots, max_shots)`` shots."""
    from .detector import detect_batch
    out = _out_dir(cfg, out_dir)
    man = RunManifest("dump-waveforms", cfg.to_flat())
    n = min(cfg.shots, max_shots)
    rng = block_rng(cfg.seed, 1 << 23)
    events = detect_batch(np.atleast_1d(sample_photons(cfg.state, rng, size=n)), cfg.detector1, rng)
    trace = render_traces(events, cfg.chain, rng)
    path = out / "waveforms.bin"
    with open(path, "wb") as fh:
        write_waveform_records(fh, trace)
    man.add(path)
    man.write(out)
    return RunResult(out, man)
