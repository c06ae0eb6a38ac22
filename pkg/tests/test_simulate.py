import json
import math

import numpy as np
import pytest

from lipclt import models, simulate
from lipclt.core import map_sample, xi_eval
from lipclt.errors import ParameterError
from lipclt.simulate import EmpiricalMeasure


class TestRunChain:
    def test_halving_states(self):
        path = simulate.run_chain(models.halving_map(), [1.0], 3)
        np.testing.assert_array_equal(path.states[:, 0], [1, 0.5, 0.25, 0.125])

    def test_halving_sum(self):
        assert simulate.run_chain(models.halving_map(), [1.0], 3).sums[-1] == 1.75

    def test_deterministic(self):
        a = simulate.run_chain(models.ar1(), [0.3], 50, seed=11)
        b = simulate.run_chain(models.ar1(), [0.3], 50, seed=11)
        assert a.to_csv() == b.to_csv()

    def test_increment_identity(self):
        m = models.doubling_ifs()
        path = simulate.run_chain(m, [0.1], 40, seed=2)
        for k in range(1, 41):
            g = path.maps.take([k - 1])
            inc = xi_eval(m, map_sample(m, g), path.states[k - 1])
            assert abs(path.sums[k] - path.sums[k - 1] - inc) <= 1e-12

    def test_matrix_cocycle_total(self):
        g = np.array([[3.0, 1.0], [0.5, 2.0]])
        m = models.single_matrix(g, gamma1_hint=0.0)
        path = simulate.run_chain(m, [0.2, 0.8], 30)
        v = np.array([0.2, 0.8])
        for _ in range(30):
            v = g @ v
        assert abs(path.cocycle_total - math.log(v.sum())) <= 1e-8

    def test_n_positive(self):
        with pytest.raises(ParameterError):
            simulate.run_chain(models.ar1(), [0.0], 0)


class TestTerminal:
    def test_deterministic_model(self):
        z, s = simulate.sample_terminal(models.halving_map(), [1.0], 5, 20)
        assert np.all(z == z[0]) and np.all(s == s[0])

    def test_thread_independent(self):
        m = models.ar1()
        a = simulate.simulate_sums(m, None, [10, 20], 3000, seed=5, threads=1)[0]
        b = simulate.simulate_sums(m, None, [10, 20], 3000, seed=5, threads=4)[0]
        np.testing.assert_array_equal(a, b)

    @pytest.mark.slow
    def test_ar1_long_run_variance(self):
        _, s = simulate.sample_terminal(models.ar1(0.5), None, 10_000, 10_000, seed=1)
        assert abs(np.var(s / 100.0) / 4.0 - 1) < 0.05

    @pytest.mark.slow
    def test_doubling_long_run_variance(self):
        _, s = simulate.sample_terminal(models.doubling_ifs(), None, 10_000, 10_000, seed=2)
        assert abs(np.var(s / 100.0) / 0.25 - 1) < 0.05


class TestCesaro:
    def test_doubling_mean_and_invariance(self):
        m = models.doubling_ifs()
        nu = simulate.cesaro_measure(m, 2000, seed=1, reps=32)
        x = nu.points[:, 0]
        assert abs(x.mean() - 0.5) < 3 * x.std() / math.sqrt(len(x) / 10)
        for f in (lambda y: y**2, lambda y: y**3, np.cos):
            lhs = f(x).mean()
            rhs = 0.5 * (f(x / 2).mean() + f((x + 1) / 2).mean())
            assert abs(lhs - rhs) < 0.01

    def test_ar1_variance(self):
        nu = simulate.cesaro_measure(models.ar1(0.5), 4000, seed=3, reps=64)
        assert abs(nu.var()[0] - 4 / 3) < 0.04

    def test_weights_sum_to_one(self):
        nu = simulate.cesaro_measure(models.ar1(0.5), 10, reps=3)
        assert nu.weights.sum() == pytest.approx(1.0) and nu.n_used == 30

    def test_fixed_point_concentration(self):
        m = models.make_affine(models.AffineSpec(dim=1, a=[0.5], b=[1.0]), models.identity_observable())
        nu = simulate.cesaro_measure(m, 1000, reps=1)
        assert np.mean(np.abs(nu.points[:, 0] - 2.0) < 1e-6) >= 0.9

    def test_json_roundtrip(self):
        nu = simulate.cesaro_measure(models.ar1(0.5), 20, reps=2)
        back = EmpiricalMeasure.from_json(nu.to_json())
        np.testing.assert_array_equal(back.points, nu.points)
        assert json.loads(nu.to_json())["origin"] == "cesaro"

    def test_empty_measure_rejected(self):
        with pytest.raises(ParameterError):
            EmpiricalMeasure.uniform(np.empty((0, 1)), "longrun")


class TestDecay:
    def test_closed_form(self):
        rep = simulate.ergodicity_decay(models.halving_map(), [1.0], EmpiricalMeasure.point_mass([0.0]), 10, 5)
        np.testing.assert_allclose(rep.w1, 2.0 ** -np.arange(11), rtol=1e-15)
        assert rep.slope == pytest.approx(math.log(0.5))

    def test_start_at_nu(self):
        m = models.ar1(0.5)
        nu = simulate.longrun_measure(m, 20_000, burn_in=60, seed=1)
        rep = simulate.ergodicity_decay(m, nu, nu, 10, 20_000, seed=2)
        assert max(rep.w1) < 5 * rep.noise_floor

    def test_ar1_slope(self):
        m = models.ar1(0.5)
        nu = simulate.longrun_measure(m, 10_000, burn_in=60, seed=1)
        rep = simulate.ergodicity_decay(m, [5.0], nu, 30, 10_000, seed=2)
        assert abs(rep.slope - math.log(0.5)) < 0.15
        assert rep.reference_slope == pytest.approx(0.5 * math.log(0.5))


class TestDrift:
    def test_identity_matrix(self):
        est = simulate.estimate_drift(models.identity_matrix(), n=100, paths=4)
        assert est.value == 0.0

    def test_single_matrix(self):
        est = simulate.estimate_drift(models.single_matrix(gamma1_hint=0.0), n=200, paths=4)
        assert est.value == pytest.approx(math.log(3), abs=1e-12)

    def test_doubling_zero_mean(self):
        est = simulate.estimate_drift(models.doubling_ifs(), n=2048, paths=32, seed=4)
        assert abs(est.value) < 3 * est.se
