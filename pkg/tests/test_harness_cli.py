import io
import json
from contextlib import redirect_stdout

import numpy as np
import pytest

from sipmsim import harness
from sipmsim.cli import EXIT_CONFIG, EXIT_DEGENERATE, EXIT_FIT, EXIT_OK, main
from sipmsim.config import from_flat, preset
from sipmsim.correlation import NRFCurve, NRFModelParams, model_R_balanced
from sipmsim.waveform import read_waveform_records


def small(name="psau_drs4", **kw):
    return preset(name, shots=kw.pop("shots", 4000), n_bootstrap=kw.pop("n_bootstrap", 20), **kw)


class TestPhs:
    def test_artifacts_and_manifest(self, tmp_path):
        cfg = small(gate_sweep=[48, 70], **{"state.mean_photons": 6.0})
        res = harness.run_phs(cfg, tmp_path)
        man = json.loads((tmp_path / harness.MANIFEST).read_text())
        assert set(man["outputs"]) == {"phs_gate48ns.csv", "phs_gate48ns.json", "phs_gate70ns.csv",
                                       "phs_gate70ns.json"}
        for name, digest in man["outputs"].items():
            assert harness.sha256_file(tmp_path / name) == digest
        meta = json.loads((tmp_path / "phs_gate70ns.json").read_text())
        assert meta["n_peaks"] >= 3 and 0 <= meta["visibility"] <= 1 and meta["visibility_err"] > 0
        assert not res.degenerate

    def test_config_echo_rebuilds_run(self, tmp_path):
        cfg = small(seed=12)
        harness.run_phs(cfg, tmp_path)
        man = harness.RunManifest.read(tmp_path / harness.MANIFEST)
        assert man.rebuild_config() == cfg
        again = harness.run_phs(man.rebuild_config(), tmp_path / "again")
        assert again.manifest.outputs == man.outputs

    def test_zero_photons_is_degenerate(self, tmp_path):
        cfg = small(**{"state.mean_photons": 0.0, "detector.dark_rate": 0.0})
        res = harness.run_phs(cfg, tmp_path)
        assert res.degenerate == ["gate70ns"]
        assert "degenerate" in json.loads((tmp_path / "phs_gate70ns.json").read_text())["notice"]

    def test_manifest_written_once(self, tmp_path):
        man = harness.RunManifest("phs", {})
        man.write(tmp_path)
        with pytest.raises(RuntimeError):
            man.write(tmp_path)


class TestNrf:
    def test_fastpath_deterministic(self, tmp_path):
        cfg = preset("twin_beam_fig10", shots=20_000, n_bootstrap=50)
        harness.run_fastpath(cfg, tmp_path / "a")
        harness.run_fastpath(from_flat({"threads": 3}, cfg), tmp_path / "b")
        a = (tmp_path / "a" / "nrf_fastpath.csv").read_bytes()
        assert a == (tmp_path / "b" / "nrf_fastpath.csv").read_bytes()

    def test_fig10_below_shot_noise(self, tmp_path):
        res = harness.run_fastpath(preset("twin_beam_fig10", shots=50_000, n_bootstrap=100), tmp_path)
        c = res.curve
        assert np.all(c.R < 1)
        assert c.R[-1] == pytest.approx(0.86, abs=4 * c.sigma_R[-1] + 0.005)

    def test_full_path_with_fit(self, tmp_path):
        cfg = small(sweep=[1.0, 3.0, 5.0], shots=3000, **{"state.kind": "Thermal", "fit.free": ["eps"],
                                                           "amplifier.rail_voltage": 2.0})
        res = harness.run_nrf(cfg, tmp_path)
        assert (tmp_path / "nrf.csv").exists() and (tmp_path / "fit.json").exists()
        rep = json.loads((tmp_path / "fit.json").read_text())
        assert rep["free"] == ["eps"] and rep["params"]["mu"] == 1.0
        assert len(res.curve) == 3

    def test_model_params_of_fig10(self):
        p = harness.model_params(preset("twin_beam_fig10"))
        assert p.quantum and p.mu == 9256
        assert p.t == pytest.approx(0.913, rel=1e-9)
        assert p.m1dc == pytest.approx(0.349, rel=1e-9)

    def test_run_fit(self, tmp_path):
        truth = NRFModelParams(mu=1, eps1=0.04, eps2=0.04)
        k = np.linspace(1, 20, 8)
        path = tmp_path / "curve.csv"
        with open(path, "w") as fh:
            NRFCurve(k, model_R_balanced(truth, k), np.full(8, 0.01), k, k).to_csv(fh)
        cfg = from_flat({"fit.free": ["eps"], "fit.fixed.mu": 1, "fit.restarts": 3})
        res = harness.run_fit(path, cfg, tmp_path / "out")
        assert res.fit.params.eps1 == pytest.approx(0.04, rel=1e-4)
        assert "curve.csv" in res.manifest.inputs
        assert res.manifest.rebuild_config() == cfg


def test_dump_waveforms(tmp_path):
    cfg = small(shots=50)
    harness.dump_waveforms(cfg, tmp_path, max_shots=20)
    with open(tmp_path / "waveforms.bin", "rb") as fh:
        recs = list(read_waveform_records(fh))
    assert len(recs) == 20 and recs[0][2].size == cfg.digitizer.record_samples


class TestCli:
    def run(self, *argv):
        buf = io.StringIO()
        with redirect_stdout(buf):
            code = main(list(argv))
        return code, buf.getvalue()

    def test_phs_ok(self, tmp_path):
        code, out = self.run("phs", "--preset", "psau_drs4", "--shots", "3000", "--seed", "1",
                             "--out", str(tmp_path), "--set", "n_bootstrap=10")
        assert code == EXIT_OK and "manifest.json" in out
        assert json.loads((tmp_path / "manifest.json").read_text())["config"]["seed"] == 1

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"preset": "twin_beam_fig10", "shots": 2000, "n_bootstrap": 10}))
        code, _ = self.run("fastpath", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert code == EXIT_OK and (tmp_path / "o" / "nrf_fastpath.csv").exists()

    def test_config_error(self, tmp_path, capsys):
        code, _ = self.run("phs", "--set", "detector1.eta=1.5", "--out", str(tmp_path))
        assert code == EXIT_CONFIG
        assert "detector1.eta" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert self.run("phs", "--config", str(tmp_path / "nope.yaml"))[0] == EXIT_CONFIG

    def test_degenerate(self, tmp_path):
        code, _ = self.run("phs", "--preset", "psau_drs4", "--shots", "2000", "--out", str(tmp_path),
                           "--set", "state.mean_photons=0",
                           "--set", "detector.dark_rate=0", "--set", "n_bootstrap=0")
        assert code == EXIT_DEGENERATE

    def test_fit_failure(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("mean_k,R,sigma_R\n1,1.0,0.01\n2,1.01,0.01\n")
        code, _ = self.run("fit", str(path), "--out", str(tmp_path / "o"), "--set", 'fit.free=["eps","t"]')
        assert code == EXIT_FIT

    def test_fit_needs_free(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("mean_k,R,sigma_R\n1,1.0,0.01\n2,1.01,0.01\n")
        assert self.run("fit", str(path), "--out", str(tmp_path / "o"))[0] == EXIT_CONFIG

    def test_schema(self):
        code, out = self.run("--schema")
        assert code == EXIT_OK and json.loads(out)["additionalProperties"] is False

    def test_no_command(self):
        assert self.run()[0] == EXIT_CONFIG
