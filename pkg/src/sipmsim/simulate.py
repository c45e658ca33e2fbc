"""Shot pipelines: photons -> avalanches -> (waveforms -> outputs) -> counts.

Shots are processed in fixed blocks of ``BLOCK`` shots. Every block draws
from its own stream, derived from the master seed, the stream purpose and
the block index, so results do not depend on how many threads run them.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .correlation import NRFCurve, noise_reduction
from .detector import DetectorConfig, EventBatch, count_in_gate, count_prompt, detect_batch
from .extraction import ExtractionConfig, Method, extract
from .sources import (BeamSplitterSpec, LightKind, LightStateSpec, sample_photons, sample_twin_beam,
                      split_at_bs)
from .spectrum import analyze_spectrum, calibrate, zero_position
from .waveform import (OVERSAMPLE_RATE, AmplifierConfig, CellPulseParams, DigitizerConfig, WaveformTrace,
                       render)

BLOCK = 4096
RENDER_CHUNK = 512
DEFAULT_COINCIDENCE = 2.0


def block_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, key...)``; same key, same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def _blocks(shots: int):
    return [(i, min(BLOCK, shots - i * BLOCK)) for i in range((shots + BLOCK - 1) // BLOCK)]


def _run_blocks(fn, shots: int, threads: int):
    blocks = _blocks(shots)
    if threads <= 1 or len(blocks) == 1:
        return [fn(i, n) for i, n in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), blocks))


@dataclass(frozen=True)
class ChainConfig:
    """Analog and digital readout shared by both arms."""

    pulse: CellPulseParams = field(default_factory=CellPulseParams)
    amplifier: AmplifierConfig = field(default_factory=AmplifierConfig)
    digitizer: DigitizerConfig = field(default_factory=DigitizerConfig)
    oversample_rate: float = OVERSAMPLE_RATE


def draw_arms(state: LightStateSpec, bs: BeamSplitterSpec | None, rng, size: int):
    """Photon numbers for both arms: twin beam, or one beam split at ``bs``."""
    if state.kind is LightKind.TWIN_BEAM:
        sp = sample_twin_beam(state, rng, size=size)
    else:
        sp = split_at_bs(sample_photons(state, rng, size=size), bs or BeamSplitterSpec(0.5), rng)
    return sp.n1, sp.n2


def render_outputs(events: EventBatch, chain: ChainConfig, extractions, rng) -> dict[str, np.ndarray]:
    """Digitize a batch of shots and apply every extraction to the same traces."""
    out = {e.label: [] for e in extractions}
    for lo in range(0, events.n_shots, RENDER_CHUNK):
        hi = min(lo + RENDER_CHUNK, events.n_shots)
        a, b = np.searchsorted(events.shot, [lo, hi])
        sub = EventBatch(hi - lo, events.shot[a:b] - lo, events.time[a:b], events.origin[a:b])
        trace = render(sub, chain.pulse, chain.amplifier, chain.digitizer, rng, chain.oversample_rate)
        for e in extractions:
            out[e.label].append(np.asarray(extract(trace, e)))
    return {k: np.concatenate(v) if v else np.zeros(0) for k, v in out.items()}


def render_traces(events: EventBatch, chain: ChainConfig, rng) -> WaveformTrace:
    return render(events, chain.pulse, chain.amplifier, chain.digitizer, rng, chain.oversample_rate)


def count_level(events: EventBatch, extraction: ExtractionConfig, coincidence_window: float = DEFAULT_COINCIDENCE):
    """Integer detections seen by an extraction, without waveforms."""
    if extraction.method is Method.GATED_INTEGRAL:
        return count_in_gate(events, extraction.width)
    return count_prompt(events, coincidence_window)


def simulate_counts(state, bs, det1: DetectorConfig, det2: DetectorConfig, extraction: ExtractionConfig,
                    shots: int, seed: int, point: int = 0, threads: int = 1,
                    coincidence_window: float = DEFAULT_COINCIDENCE):
    """Count-level (fast path) detections for both arms."""

    def block(i, n):
        rng = block_rng(seed, point, i)
        n1, n2 = draw_arms(state, bs, rng, n)
        e1 = detect_batch(n1, det1, rng)
        e2 = detect_batch(n2, det2, rng)
        return count_level(e1, extraction, coincidence_window), count_level(e2, extraction, coincidence_window)

    parts = _run_blocks(block, shots, threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def simulate_two_arm_outputs(state, bs, det1, det2, chain: ChainConfig, extractions, shots: int, seed: int,
                             point: int = 0, threads: int = 1):
    """Full-waveform outputs ``{label: (x1, x2)}`` for both arms."""

    def block(i, n):
        rng = block_rng(seed, point, i)
        n1, n2 = draw_arms(state, bs, rng, n)
        e1 = detect_batch(n1, det1, rng)
        e2 = detect_batch(n2, det2, rng)
        return render_outputs(e1, chain, extractions, rng), render_outputs(e2, chain, extractions, rng)

    parts = _run_blocks(block, shots, threads)
    return {e.label: (np.concatenate([p[0][e.label] for p in parts]),
                      np.concatenate([p[1][e.label] for p in parts])) for e in extractions}


def simulate_outputs(state: LightStateSpec, det: DetectorConfig, chain: ChainConfig, extractions, shots: int,
                     seed: int, threads: int = 1) -> dict[str, np.ndarray]:
    """Single-arm outputs ``{label: x}``, all extractions on the same traces."""

    def block(i, n):
        rng = block_rng(seed, 0, i)
        n_ph = sample_photons(state, rng, size=n)
        ev = detect_batch(n_ph, det, rng)
        return render_outputs(ev, chain, extractions, rng)

    parts = _run_blocks(block, shots, threads)
    return {e.label: np.concatenate([p[e.label] for p in parts]) for e in extractions}


def calibrate_outputs(x, rng=None, rounding: bool = True):
    """Detected-photon values from raw outputs via the spectrum's gain and 0-peak."""
    phs = analyze_spectrum(x, rng=rng, n_bootstrap=0)
    z = zero_position(phs.peak_positions, phs.gamma_bar)
    return calibrate(x, phs.gamma_bar, z, rounding=rounding), phs


def _curve_point(k1, k2, rng, n_bootstrap):
    r, s = noise_reduction(k1, k2, rng=rng, n_bootstrap=n_bootstrap)
    m1, m2 = float(np.mean(k1)), float(np.mean(k2))
    return (m1, r, s, m1, m2)


def simulate_R_curve(state: LightStateSpec, bs: BeamSplitterSpec | None, det1: DetectorConfig,
                     det2: DetectorConfig, extraction: ExtractionConfig, shots_per_point: int, mean_sweep,
                     seed: int = 0, path: str = "fast", chain: ChainConfig | None = None, threads: int = 1,
                     coincidence_window: float = DEFAULT_COINCIDENCE, rounding: bool = True,
                     n_bootstrap: int = 500) -> NRFCurve:
    """R versus mean detections for a sweep of source means.

    ``mean_sweep`` holds source mean photon numbers (per arm for twin
    beams, before the splitter otherwise). ``path="fast"`` counts
    avalanches; ``path="full"`` renders, extracts and calibrates waveforms.
    """
    if path not in ("fast", "full"):
        raise ValueError(f"path must be 'fast' or 'full', got {path!r}")
    if path == "full" and chain is None:
        raise ValueError("full path needs a ChainConfig")
    points = []
    for j, m in enumerate(mean_sweep):
        st = state.with_mean(float(m))
        boot_rng = block_rng(seed, j, 1 << 20)
        if path == "fast":
            k1, k2 = simulate_counts(st, bs, det1, det2, extraction, shots_per_point, seed, j, threads,
                                     coincidence_window)
        else:
            x = simulate_two_arm_outputs(st, bs, det1, det2, chain, [extraction], shots_per_point, seed, j,
                                         threads)[extraction.label]
            k1, _ = calibrate_outputs(x[0], rounding=rounding)
            k2, _ = calibrate_outputs(x[1], rounding=rounding)
        points.append(_curve_point(k1, k2, boot_rng, n_bootstrap))
    return NRFCurve.from_points(points)
