import json
import math

import numpy as np
import pytest
from scipy import integrate

from lipclt import cli, config, harness, models
from lipclt.errors import ConfigError, HypothesisFailure, ParameterError
from lipclt.pipeline import run_experiment
from lipclt.stats import ks_normal

FAST = {
    "diagnostics": {"nsamples": 2000},
    "simulation": {"paths": 512, "horizon": 64, "decay_horizon": 10, "decay_paths": 512},
    "variance": {"n_grid": [16, 64, 256], "paths": 2000, "points": 2000},
    "spectral": {"grid": 129, "t_points": 5, "scan": False},
    "harness": {"n_grid": [16, 64, 256], "paths": 2000},
}


def fast_config(**model):
    return {"model": model or {"preset": "doubling_ifs"}, **json.loads(json.dumps(FAST))}


class TestKS:
    def test_exact_sup(self):
        assert ks_normal(np.array([0.0])) == pytest.approx(0.5)

    def test_null_calibration(self):
        rep = harness.null_calibration(paths=2000, reps=100, seed=1)
        assert rep["ok"], rep

    def test_ar1_consistent(self):
        rep = harness.clt_test(models.ar1(0.5), 4.0, n_grid=(64, 256, 1024), paths=5000, seed=2)
        assert rep.verdict == "BE-consistent"
        assert all(0 <= d <= 1 for d in rep.ks)
        assert rep.paths == [5000] * 3

    def test_degenerate_refused(self):
        with pytest.raises(HypothesisFailure):
            harness.clt_test(models.ar1(0.5, observable="coboundary"), 0.0)


class TestLocal:
    @pytest.mark.parametrize("name", sorted(harness.H_FAMILIES))
    def test_integrals(self, name):
        h = harness.h_function(name)
        val, _ = integrate.quad(h, -50, 50, points=[-1, 0, 1], limit=200)
        assert val == pytest.approx(h.integral, abs=1e-8)
        assert abs(1e6**2 * h(1e6)) < 1e-6

    def test_unknown_h(self):
        with pytest.raises(ParameterError):
            harness.h_function("box")

    def test_arithmetic_refused(self):
        with pytest.raises(HypothesisFailure):
            harness.local_clt_test(models.iid_pm1(), 1.0, n_grid=(16, 64), paths=100)

    def test_override(self):
        rep = harness.local_clt_test(models.iid_pm1(), 1.0, n_grid=(16, 64), paths=100, override=True)
        assert rep.nonarithmetic == "override"

    @pytest.mark.slow
    def test_ar1_gaussian(self):
        rep = harness.local_clt_test(models.ar1(0.5), 4.0, n_grid=(256, 1024), paths=40_000, seed=3)
        assert rep.nonarithmetic == "unverified"
        assert rep.verdict == "consistent", rep.to_dict()


class TestConfig:
    def test_defaults_filled(self):
        cfg = config.normalise({"model": {"preset": "ar1"}})
        assert cfg["harness"]["paths"] == 20_000 and cfg["seed"] == 0

    @pytest.mark.parametrize("raw,path", [
        ({"model": {"family": "spline"}}, "model.family"),
        ({"model": {"preset": "ar1"}, "simulation": {"paths": 0}}, "simulation.paths"),
        ({"model": {"preset": "ar1"}, "simulation": {"pathz": 3}}, "simulation"),
        ({"model": {"preset": "ar1"}, "seed": -1}, "seed"),
        ({"model": {"preset": "ar1"}, "pipeline": ["clt"]}, "harness.sigma2"),
        ({}, "model"),
    ])
    def test_errors_name_path(self, raw, path):
        with pytest.raises(ConfigError) as err:
            config.experiment(raw)
        assert err.value.path == path

    def test_hash_stable(self):
        a = config.experiment({"model": {"preset": "ar1"}, "seed": 3})
        b = config.experiment({"seed": 3, "model": {"preset": "ar1"}})
        assert a.hash == b.hash
        assert config.experiment({"model": {"preset": "ar1"}, "seed": 4}).hash != a.hash

    def test_matrix_family(self):
        exp = config.experiment({"model": {"family": "matrix", "matrices": [[[2, 1], [1, 2]]],
                                           "gamma1_hint": math.log(3)}})
        assert exp.model.m == pytest.approx(math.log(3))


class TestPipeline:
    def test_doubling_all_reports(self, tmp_path):
        res = run_experiment(fast_config(), tmp_path / "out", seed=1)
        names = {p.name for p in (tmp_path / "out").iterdir()}
        assert {f"{s}.json" for s in config.STAGES} <= names
        for s in config.STAGES:
            rep = json.loads((tmp_path / "out" / f"{s}.json").read_text())
            assert rep["config_hash"] == res["manifest"]["config_hash"] and rep["seed"] == 1

    def test_identity_stops(self, tmp_path):
        with pytest.raises(HypothesisFailure):
            run_experiment(fast_config(preset="identity"), tmp_path)
        assert (tmp_path / "diagnose.json").exists()
        assert not (tmp_path / "simulate.json").exists()

    def test_deterministic(self, tmp_path):
        run_experiment(fast_config(), tmp_path / "a", seed=9)
        run_experiment(fast_config(), tmp_path / "b", seed=9)
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


class TestCLI:
    def test_exit_zero(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(fast_config()))
        assert cli.main(["diagnose", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert json.loads(capsys.readouterr().out)["files"] == ["diagnose.json"]

    def test_config_error_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text("{not json")
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_hypothesis_exit_3(self, tmp_path):
        assert cli.main(["run", "--preset", "identity", "--out", str(tmp_path), "--paths", "256"]) == 3

    def test_threads_do_not_change_output(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(fast_config()))
        for t in ("1", "3"):
            assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / t), "--threads", t]) == 0
        assert (tmp_path / "1" / "simulate.json").read_bytes() == (tmp_path / "3" / "simulate.json").read_bytes()
