"""Acceptance criteria 1-10, each at its stated tolerance and runtime budget."""
import time

import numpy as np
import pytest

from sipmsim.config import preset
from sipmsim.correlation import (NRFCurve, NRFModelParams, fit_model, imbalance_bounds, model_R_balanced,
                                 model_R_general)
from sipmsim.detector import DetectorConfig, mean_k, mean_n_for_k
from sipmsim.errors import InvalidParameters
from sipmsim.extraction import ExtractionConfig
from sipmsim.simulate import simulate_outputs, simulate_R_curve
from sipmsim.sources import BeamSplitterSpec, LightStateSpec
from sipmsim.spectrum import analyze_spectrum, linearity_check

pytestmark = pytest.mark.acceptance

IDEAL = dict(dark_rate=0.0, eps_prompt=0.0, eps_delayed=0.0)
GATE110 = ExtractionConfig("GatedIntegral", 110.0)
SHOTS = 100_000


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def z_scores(curve, expected):
    return np.abs(curve.R - expected) / curve.sigma_R


def test_c1_point_value(criterion):
    with Timer() as t:
        p = NRFModelParams.symmetric(eta=0.182, eps=0.019, mdc=0.349, mu=9256, t=0.913, quantum=True)
        r = model_R_balanced(p, 11.0)
    ok = abs(r - 0.858) <= 0.005 and t.elapsed < 0.1
    assert criterion(1, ok, f"R(11) = {r:.4f} (target 0.858 +- 0.005), {t.elapsed * 1e3:.2f} ms")


def test_c2_general_reduces_to_balanced(criterion):
    rng = np.random.default_rng(2024)
    worst, n_done = 0.0, 0
    with Timer() as t:
        while n_done < 10_000:
            eps1, eps2 = rng.uniform(0, 0.5, 2)
            p = NRFModelParams(mu=float(10 ** rng.uniform(0, 4)), eta1=rng.uniform(), eta2=rng.uniform(),
                               eps1=eps1, eps2=eps2, m1dc=rng.uniform(0, 1), m2dc=rng.uniform(0, 1),
                               t=rng.uniform(0.3, 1.0), quantum=bool(rng.integers(2)))
            k = rng.uniform(2, 40)
            try:
                bal = model_R_balanced(p, k)
            except InvalidParameters:
                continue
            gen = model_R_general(p, k, p.t * k)
            worst = max(worst, abs(gen - bal) / abs(bal))
            n_done += 1
    ok = worst < 1e-12 and t.elapsed < 1.0
    assert criterion(2, ok, f"max relative difference {worst:.2e} over {n_done} sets, {t.elapsed:.2f} s")


SWEEP = [2.0, 5.0, 10.0, 20.0, 40.0]


def test_c3_ideal_quantum_floor(criterion):
    det = DetectorConfig(eta=0.2, **IDEAL)
    with Timer() as t:
        curve = simulate_R_curve(LightStateSpec("TwinBeam", 1.0, 100), None, det, det, GATE110, SHOTS, SWEEP,
                                 seed=3)
    z = z_scores(curve, 0.8)
    ok = np.all(z < 4) and t.elapsed < 30
    assert criterion(3, ok, f"R = {np.round(curve.R, 4).tolist()}, max |z| = {z.max():.2f}, {t.elapsed:.1f} s")


def test_c4_classical_shot_noise(criterion):
    det = DetectorConfig(eta=1.0, **IDEAL)
    with Timer() as t:
        curve = simulate_R_curve(LightStateSpec("Thermal", 1.0), BeamSplitterSpec(0.5), det, det, GATE110,
                                 SHOTS, SWEEP, seed=4)
    z = z_scores(curve, 1.0)
    ok = np.all(z < 4) and t.elapsed < 30
    assert criterion(4, ok, f"R = {np.round(curve.R, 4).tolist()}, max |z| = {z.max():.2f}, {t.elapsed:.1f} s")


def test_c5_crosstalk_excess(criterion):
    det = DetectorConfig(eta=0.5, dark_rate=0.0, eps_prompt=0.03, eps_delayed=0.0)
    expected = 1 + 2 * 0.03 / 1.03
    with Timer() as t:
        curve = simulate_R_curve(LightStateSpec("Coherent", 1.0), BeamSplitterSpec(0.5), det, det, GATE110,
                                 SHOTS, SWEEP, seed=5)
    z = z_scores(curve, expected)
    ok = np.all(z < 4) and t.elapsed < 30
    assert criterion(5, ok, f"R = {np.round(curve.R, 4).tolist()} vs {expected:.4f}, max |z| = {z.max():.2f}, "
                            f"{t.elapsed:.1f} s")


def test_c6_dark_count_arithmetic(criterion):
    with Timer() as t:
        m = mean_k(0.0, DetectorConfig(dark_rate=270e3, eps_prompt=0.0, eps_delayed=0.0), 110.0)
    ok = m == pytest.approx(0.0297, rel=1e-12) and t.elapsed < 0.1
    assert criterion(6, ok, f"270 kHz x 110 ns = {m:.6g}")


def test_c7_fit_recovery(criterion):
    truth = NRFModelParams(mu=1, eps1=0.03, eps2=0.03, m1dc=0.23, m2dc=0.57, t=0.999)
    k = np.linspace(1, 30, 15)
    good = 0
    with Timer() as t:
        for trial in range(50):
            rng = np.random.default_rng(7000 + trial)
            R = model_R_balanced(truth, k) + rng.normal(0, 0.01, k.size)
            curve = NRFCurve(k, R, np.full(k.size, 0.01), k, truth.t * k)
            res = fit_model(curve, ["eps", "m1dc", "m2dc", "t"], bounds={"t": imbalance_bounds(curve)},
                            fixed=NRFModelParams(mu=1), restarts=10, rng=rng)
            good += abs(res.params.eps1 / 0.03 - 1) <= 0.2
    ok = good >= 45 and t.elapsed < 120
    assert criterion(7, ok, f"eps within 20% in {good}/50 trials (need 45), {t.elapsed:.1f} s")


def _visibilities(cfg, mean_n, extractions, seed):
    x = simulate_outputs(LightStateSpec("Coherent", mean_n), cfg.detector1, cfg.chain, extractions, SHOTS, seed)
    return {e.label: analyze_spectrum(x[e.label]).visibility for e in extractions}


def test_c8_visibility_trends(criterion):
    fast = preset("psau_drs4")
    slow = preset("slow_drs4")
    gate = {w: ExtractionConfig("GatedIntegral", w) for w in (2.4, 48.0, 70.0, 100.0)}
    with Timer() as t:
        va = _visibilities(fast, mean_n_for_k(13, fast.detector1, 70.0), [gate[70.0], gate[2.4]], 21)
        vb = _visibilities(fast, mean_n_for_k(1, fast.detector1, 70.0), [gate[48.0], gate[100.0]], 21)
        vc = _visibilities(slow, mean_n_for_k(3.6, slow.detector1, slow.coincidence_window, "peak"),
                           [slow.extraction, ExtractionConfig("PrePeakIntegral", 10.0),
                            ExtractionConfig("PrePeakIntegral", 18.0)], 21)
    a = va["gate70ns"] > va["gate2.4ns"]
    b = vb["gate48ns"] > vb["gate100ns"]
    c = vc["peak"] >= vc["prepeak10ns"] >= vc["prepeak18ns"]
    ok = a and b and c and t.elapsed < 300
    fmt = lambda d: ", ".join(f"{k} {v:.3f}" for k, v in d.items())  # noqa: E731
    assert criterion(8, ok, f"(a) {fmt(va)}; (b) {fmt(vb)}; (c) {fmt(vc)}; {t.elapsed:.0f} s")


def _gamma_check(name, shots, seed):
    cfg = preset(name)
    n = mean_n_for_k(14, cfg.detector1, cfg.extraction.width)
    x = simulate_outputs(LightStateSpec("Thermal", n), cfg.detector1, cfg.chain, [cfg.extraction], shots,
                         seed)[cfg.extraction.label]
    phs = analyze_spectrum(x)
    dev = float(np.max(np.abs(phs.gamma_series / phs.gamma_bar - 1)))
    knee = linearity_check(phs.gamma_series) if phs.gamma_series.size >= 3 else None
    return knee, dev, phs.gamma_series.size


def test_c9_saturation_knee(criterion):
    with Timer() as t:
        clip_knee, _, clip_n = _gamma_check("psau_drs4_clip", 60_000, 1)
        linear = {name: _gamma_check(name, 60_000, 1) for name in ("psau_drs4", "psau_dt5720")}
    ok_clip = clip_knee is not None and abs(clip_knee - 10) <= 2
    ok_lin = all(knee is None and dev < 0.02 for knee, dev, _ in linear.values())
    ok = ok_clip and ok_lin and t.elapsed < 60
    lin = "; ".join(f"{n}: knee {k}, max dev {d:.4f} over {m} gammas" for n, (k, d, m) in linear.items())
    assert criterion(9, ok, f"clip knee at peak {clip_knee} ({clip_n} gammas); {lin}; {t.elapsed:.0f} s")


def test_c10_delayed_rejection(criterion):
    det = DetectorConfig(eps_prompt=0.02, eps_delayed=0.03, dark_rate=9e4)
    targets = [1.0, 2.0, 5.0, 8.0, 12.0]
    peak = ExtractionConfig("PeakValue", 150.0)
    curves = {}
    with Timer() as t:
        for e, mode, window in ((peak, "peak", 2.0), (GATE110, "integral", 110.0)):
            means = [2 * mean_n_for_k(k, det, window, mode) for k in targets]
            curves[e.label] = simulate_R_curve(LightStateSpec("Coherent", 1.0), BeamSplitterSpec(0.5), det, det,
                                               e, SHOTS, means, seed=10, coincidence_window=2.0, n_bootstrap=200)
    p, g = curves["peak"], curves["gate110ns"]
    sep = (g.R - p.R) / np.hypot(p.sigma_R, g.sigma_R)
    high = np.asarray(targets) >= 5
    ok = np.all(p.R < g.R) and np.all(sep[high] >= 4) and t.elapsed < 120
    assert criterion(10, ok, f"peak R {np.round(p.R, 4).tolist()}, gate R {np.round(g.R, 4).tolist()}, "
                             f"min separation at <k> >= 5: {sep[high].min():.1f} sigma, {t.elapsed:.0f} s")
