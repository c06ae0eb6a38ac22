import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipclt import models, simulate
from lipclt import spectral as sp
from lipclt.errors import AmbiguousDominanceError, ParameterError, UnsupportedModelError


@pytest.fixture(scope="module")
def dbl():
    m = models.doubling_ifs()
    return m, sp.make_grid(m, 513, window=(0.0, 1.0))


class TestGrid:
    def test_nodes_sorted(self):
        with pytest.raises(ParameterError):
            sp.OperatorGrid(np.array([0.0, 0.5, 0.4]))

    def test_window_from_measure(self):
        m = models.ar1(0.5, noise="pm1")
        nu = simulate.longrun_measure(m, 20_000, burn_in=60)
        grid = sp.make_grid(m, 129, nu_hat=nu)
        u = nu.points[:, 0]
        lo, hi = grid.window
        assert np.mean((u >= lo) & (u <= hi)) >= 0.99

    def test_generative_refused(self):
        with pytest.raises(UnsupportedModelError):
            sp.make_grid(models.ar1(0.5))

    def test_interpolation_exact_on_lines(self):
        g = sp.OperatorGrid(np.linspace(0, 1, 11))
        x = np.random.default_rng(0).uniform(0, 1, (50, 1))
        np.testing.assert_allclose(g.interpolate(3 * g.nodes - 1, x), 3 * x[:, 0] - 1, atol=1e-14)


class TestOperator:
    def test_row_sums(self, dbl):
        p0 = sp.build_operator(*dbl, 0.0).entries
        assert np.all(p0.imag == 0) and np.all(p0.real >= 0)
        assert np.max(np.abs(p0.sum(axis=1) - 1)) <= 1e-10

    def test_constant_eigenvector(self, dbl):
        p0 = sp.build_operator(*dbl, 0.0)
        np.testing.assert_allclose(p0.apply(np.ones(513)), 1.0, atol=1e-14)

    def test_half_eigenfunction(self, dbl):
        m, grid = dbl
        f = grid.nodes - 0.5
        assert np.max(np.abs(sp.build_operator(m, grid, 0.0).apply(f) - f / 2)) <= 1e-9

    def test_entry_modulus_bound(self, dbl):
        p0 = np.abs(sp.build_operator(*dbl, 0.0).entries)
        pt = np.abs(sp.build_operator(*dbl, 1.3).entries)
        assert np.all(pt <= p0 + 1e-15)

    def test_zero_observable_kernels(self):
        m = models.doubling_ifs(observable="zero")
        grid = sp.make_grid(m, 33, window=(0, 1))
        for k in (1, 2, 3):
            assert np.all(sp.derivative_kernel(m, grid, k).entries == 0)

    def test_constant_observable_first_kernel(self):
        m = models.constant_observable_model(0.7)
        grid = sp.make_grid(m, 33, window=(0, 1))
        l1 = sp.derivative_kernel(m, grid, 1).entries
        p0 = sp.build_operator(m, grid, 0.0).entries
        np.testing.assert_allclose(l1, 0.7j * p0, atol=1e-15)

    @pytest.mark.parametrize("order", [1, 2])
    def test_taylor_residual_ratios(self, dbl, order):
        rep = sp.taylor_residuals(*dbl, order)
        assert all(r >= 3 for r in rep["ratios"])
        assert rep["scaled"][-1] < rep["scaled"][0]


class TestEigen:
    def test_leading_at_zero(self, dbl):
        e = sp.leading_eigen(sp.build_operator(*dbl, 0.0))
        assert abs(e.value - 1) <= 1e-8
        np.testing.assert_allclose(e.vector, 1.0, atol=1e-8)
        assert abs(e.second - 0.5) <= 1e-6

    def test_conjugate_symmetry(self, dbl):
        a = sp.leading_eigen(sp.build_operator(*dbl, 0.37)).value
        b = sp.leading_eigen(sp.build_operator(*dbl, -0.37)).value
        assert abs(b - a.conjugate()) <= 1e-10
        assert abs(a) <= 1 + 1e-8

    def test_ambiguous_dominance(self):
        grid = sp.OperatorGrid(np.linspace(0, 1, 3))
        swap = np.array([[0, 0, 1], [0, 1, 0], [1, 0, 0]], dtype=complex)
        with pytest.raises(AmbiguousDominanceError):
            sp.leading_eigen(sp.FourierMatrix(0.0, swap, grid))

    def test_refinement_stable(self, dbl):
        m, grid = dbl
        a = sp.leading_eigen(sp.build_operator(m, grid, 0.5)).value
        b = sp.leading_eigen(sp.build_operator(m, grid.refined(), 0.5)).value
        assert abs(a - b) < 1e-4


class TestExpansion:
    def test_doubling(self, dbl):
        exp = sp.lambda_expansion(*dbl, t_grid=[-0.1, 0.05, 0.1])
        assert abs(exp.m) <= 1e-6
        assert abs(exp.sigma2 / 0.25 - 1) <= 0.01
        assert all(r["ratio"] < 10 for r in exp.remainder)

    def test_zero_observable(self):
        m = models.doubling_ifs(observable="zero")
        exp = sp.lambda_expansion(m, sp.make_grid(m, 65, window=(0, 1)))
        assert exp.m == 0.0 and exp.sigma2 == 0.0

    @pytest.mark.slow
    def test_ar1_pm1_matches_batch(self):
        from lipclt.variance import sigma2_batch

        m = models.ar1(0.5, noise="pm1")
        nu = simulate.longrun_measure(m, 20_000, burn_in=60, seed=1)
        spec = sp.sigma2_spectral(m, sp.make_grid(m, 1025, nu_hat=nu), nu_hat=nu)
        batch = sigma2_batch(m, init=nu, n_grid=(64, 256, 1024), paths=40_000, seed=2)
        assert abs(spec.sigma2 / batch.sigma2 - 1) <= 0.02 + 3 * batch.se / batch.sigma2


class TestCharCheck:
    def test_trivial(self, dbl):
        m, grid = dbl
        c = sp.char_function_check(m, grid, [0.3], np.ones(513), 0.0, 5, paths=100)
        assert c.operator == 1 and c.monte_carlo == 1

    def test_deterministic_single_step(self):
        m = models.halving_map()
        grid = sp.make_grid(m, 65, window=(0, 1))
        f = grid.nodes**2
        c = sp.char_function_check(m, grid, [0.4], f, 1.1, 1, paths=10)
        assert abs(c.operator - c.monte_carlo) <= 1e-10

    @pytest.mark.slow
    def test_basic_lemma(self, dbl):
        m, grid = dbl
        c = sp.char_function_check(m, grid, [1 / 3], np.ones(513), 0.3, 20, paths=100_000, seed=4)
        assert abs(c.z) <= 3


class TestPeripheral:
    def test_lattice_flagged(self):
        m = models.iid_pm1()
        rep = sp.peripheral_scan(m, sp.make_grid(m, 33, window=(-0.5, 0.5)), points=8)
        assert rep.verdict == "arithmetic-suspect"
        row = next(r for r in rep.table if r["t"] == math.pi)
        assert abs(row["modulus"] - 1) <= 1e-9

    def test_rho_pairs(self):
        assert not sp.rho_pair_test(2.0, 3.0)["arithmetic_suspect"]
        hit = sp.rho_pair_test(2.0, 4.0)
        assert hit["arithmetic_suspect"]
        assert hit["tests"]["ratio_of_logs"]["p_q"] == [2, 1]

    def test_rational_approximation(self):
        assert sp.rational_approximation(math.log(1.5)) is None
        assert sp.rational_approximation(0.75) == (3, 4)

    def test_needs_interval_away_from_zero(self, dbl):
        with pytest.raises(ParameterError):
            sp.peripheral_scan(*dbl, t_range=(-1, 1))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 500), st.integers(1, 500))
def test_rationals_recovered(p, q):
    g = math.gcd(p, q)
    assert sp.rational_approximation(p / q) == (p // g, q // g)
