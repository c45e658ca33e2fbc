import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sipmsim.detector import (AvalancheEventList, DetectorConfig, Origin, count_in_gate, count_prompt, detect,
                              detect_batch, effective_crosstalk, mean_dark, mean_k, mean_n_for_k)

IDEAL = dict(dark_rate=0.0, eps_prompt=0.0, eps_delayed=0.0, afterpulse_prob=0.0)


def rng(seed=0):
    return np.random.default_rng(seed)


def events(times):
    t = np.asarray(times, dtype=float)
    return AvalancheEventList(t, np.zeros(t.size, dtype=np.int8))


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(eta=1.2), dict(n_cells=0), dict(dark_rate=-1), dict(eps_prompt=1.0),
                                    dict(ct_delay_tau=0), dict(record_window=-5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DetectorConfig(**kw)

    def test_datasheet_defaults(self):
        cfg = DetectorConfig()
        assert cfg.n_cells == 667
        assert cfg.dark_rate == 9.0e4
        assert cfg.eps_prompt + cfg.eps_delayed == pytest.approx(0.03)
        assert cfg.afterpulse_prob == 0


class TestDetect:
    def test_nothing(self):
        ev = detect(0, DetectorConfig(dark_rate=0.0), rng())
        assert len(ev) == 0

    def test_lossless(self):
        ev = detect(5, DetectorConfig(eta=1.0, **IDEAL), rng())
        assert len(ev) == 5
        assert np.all(ev.time == 0) and np.all(ev.origin == Origin.PHOTON)

    def test_binomial_thinning_of_poisson(self):
        r = rng(1)
        n = r.poisson(10, size=200_000)
        k = detect_batch(n, DetectorConfig(eta=0.38, **IDEAL), r).counts()
        assert abs(k.mean() - 3.8) < 4 * np.sqrt(3.8 / n.size)

    @given(st.lists(st.integers(0, 60), min_size=1, max_size=40), st.integers(0, 2 ** 32))
    @settings(max_examples=40)
    def test_identity_without_drawbacks(self, n, seed):
        k = detect_batch(np.array(n), DetectorConfig(eta=1.0, **IDEAL), rng(seed)).counts()
        assert np.array_equal(k, n)

    @given(st.integers(0, 3000), st.integers(1, 50), st.floats(0, 0.9), st.integers(0, 2 ** 32))
    @settings(max_examples=40)
    def test_capacity(self, n, cells, eps, seed):
        cfg = DetectorConfig(eta=1.0, n_cells=cells, eps_prompt=eps, eps_delayed=eps / 2, dark_rate=1e7)
        batch = detect_batch(np.array([n, n // 2]), cfg, rng(seed))
        assert np.all(batch.counts() <= cells)

    def test_capacity_drops_latest(self):
        cfg = DetectorConfig(eta=1.0, n_cells=3, dark_rate=5e8, eps_prompt=0, eps_delayed=0)
        ev = detect(3, cfg, rng(2))
        assert len(ev) == 3 and np.all(ev.time == 0)

    def test_times_in_window(self):
        cfg = DetectorConfig(dark_rate=1e8, eps_delayed=0.3, afterpulse_prob=0.3)
        b = detect_batch(np.full(500, 10), cfg, rng(3))
        assert b.time.min() >= 0 and b.time.max() <= cfg.record_window

    def test_sorted_by_shot_and_time(self):
        b = detect_batch(np.full(200, 5), DetectorConfig(dark_rate=1e7, eps_delayed=0.2), rng(4))
        key = b.shot * 1e6 + b.time
        assert np.all(np.diff(key) >= 0)

    def test_delayed_ct_admitted_fraction(self):
        cfg = DetectorConfig(eta=1.0, dark_rate=0.0, eps_prompt=0.0, eps_delayed=0.03, ct_delay_tau=20.0,
                             record_window=1e4)
        n = 400_000
        b = detect_batch(np.ones(n, dtype=int), cfg, rng(5))
        admitted = (count_in_gate(b, 110.0) - 1).mean()
        expected = 0.03 * (1 - np.exp(-5.5))
        assert expected == pytest.approx(0.0299, abs=5e-5)
        assert abs(admitted - expected) < 4 * np.sqrt(expected / n)

    def test_prompt_ct_fano(self):
        eps, lam, n = 0.2, 4.0, 400_000
        r = rng(6)
        cfg = DetectorConfig(eta=1.0, dark_rate=0.0, eps_prompt=eps, eps_delayed=0.0)
        k = detect_batch(r.poisson(lam, size=n), cfg, r).counts()
        fano = k.var() / k.mean()
        assert fano == pytest.approx((1 + 3 * eps) / (1 + eps), abs=4 * np.sqrt(2.0 / n) * 1.2)

    def test_afterpulse_origin(self):
        cfg = DetectorConfig(eta=1.0, afterpulse_prob=0.5, dark_rate=0.0, eps_prompt=0, eps_delayed=0,
                             record_window=1e4)
        b = detect_batch(np.full(2000, 4), cfg, rng(7))
        frac = np.mean(b.origin == Origin.AFTERPULSE) * len(b) / 8000
        assert frac == pytest.approx(0.5, abs=0.03)


class TestMeanK:
    def test_formula(self):
        cfg = DetectorConfig(eta=0.5, dark_rate=0.5 / 100e-9, eps_prompt=0.02, eps_delayed=0.0)
        assert mean_k(10, cfg, 100.0) == pytest.approx(5.61, rel=1e-12)

    def test_all_zero(self):
        cfg = DetectorConfig(eta=0.0, **IDEAL)
        assert mean_k(0.0, cfg, 50.0) == 0.0

    def test_stray_light_dark(self):
        cfg = DetectorConfig(dark_rate=270e3, eps_prompt=0.0, eps_delayed=0.0)
        assert mean_k(0.0, cfg, 110.0) == pytest.approx(0.0297, rel=1e-12)
        assert mean_dark(cfg, 110.0) == pytest.approx(0.0297, rel=1e-12)

    def test_bad_gate(self):
        with pytest.raises(ValueError):
            mean_k(1.0, DetectorConfig(), 0.0)

    def test_peak_sees_prompt_only(self):
        cfg = DetectorConfig(eps_prompt=0.02, eps_delayed=0.05)
        assert effective_crosstalk(cfg, 100.0, "peak") == 0.02
        assert effective_crosstalk(cfg, 100.0) == pytest.approx(0.02 + 0.05 * (1 - np.exp(-5)))

    def test_inverse(self):
        cfg = DetectorConfig()
        n = mean_n_for_k(7.0, cfg, 70.0)
        assert mean_k(n, cfg, 70.0) == pytest.approx(7.0)

    def test_inverse_below_floor(self):
        with pytest.raises(ValueError):
            mean_n_for_k(1e-4, DetectorConfig(dark_rate=1e7), 100.0)

    @pytest.mark.parametrize("eta,dark,eps_p,eps_d", [
        (0.38, 9e4, 0.02, 0.01), (0.2, 1e6, 0.0, 0.03), (0.8, 3e6, 0.04, 0.0), (0.5, 0.0, 0.1, 0.1),
    ])
    def test_monte_carlo_agrees(self, eta, dark, eps_p, eps_d):
        cfg = DetectorConfig(eta=eta, dark_rate=dark, eps_prompt=eps_p, eps_delayed=eps_d)
        gate, mean_n, n = 70.0, 6.0, 200_000
        r = rng(int(eta * 100))
        k = count_in_gate(detect_batch(r.poisson(mean_n, size=n), cfg, r), gate)
        assert abs(k.mean() - mean_k(mean_n, cfg, gate)) < 4 * k.std() / np.sqrt(n)


class TestCounting:
    def test_empty(self):
        assert count_in_gate(events([]), 10.0) == 0

    def test_direct(self):
        assert count_in_gate(events([0, 0, 30]), 10.0) == 2

    def test_gate_edge_inclusive(self):
        assert count_in_gate(events([0, 10.0]), 10.0) == 2

    def test_bad_gate(self):
        with pytest.raises(ValueError):
            count_in_gate(events([0]), 0.0)

    def test_batch(self):
        ev = events([0, 5, 50]).as_batch()
        assert np.array_equal(count_in_gate(ev, 10.0), [2])

    def test_prompt_excludes_delayed(self):
        ev = AvalancheEventList(np.array([0, 0, 1.0, 0.5, 30]),
                                np.array([Origin.PHOTON, Origin.PROMPT_CT, Origin.DELAYED_CT, Origin.DARK,
                                          Origin.DARK], dtype=np.int8))
        assert count_prompt(ev, 2.0) == 3

    def test_prompt_batch_mean(self):
        cfg = DetectorConfig(eta=0.4, dark_rate=3e6, eps_prompt=0.03, eps_delayed=0.05)
        r = rng(9)
        n = 200_000
        k = count_prompt(detect_batch(r.poisson(5.0, size=n), cfg, r), 2.0)
        assert abs(k.mean() - mean_k(5.0, cfg, 2.0, "peak")) < 4 * k.std() / np.sqrt(n)
