import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipclt import models
from lipclt.core import atom
from lipclt.errors import DomainError, SpecError


def test_affine_lip_exact_gaussian():
    m = models.ar1(0.5)
    maps = m.draw(np.random.default_rng(0), 100)
    assert np.all(m.lip(maps) == 0.5)


def test_affine_disp_deterministic():
    m = models.make_affine(models.AffineSpec(dim=1, a=[0.5], b=[1.0]), models.identity_observable())
    assert atom(m, 0).disp == 1.0


def test_affine_vector_operator_norm():
    spec = models.AffineSpec(dim=2, a=[0.5 * np.eye(2)], b=[[1.0, 0.0]])
    g = atom(models.make_affine(spec, models.identity_observable()), 0)
    assert g.lip == pytest.approx(0.5, abs=1e-15)
    assert g.disp == pytest.approx(1.0, abs=1e-15)


def test_metric_exponent_alpha():
    spec = models.AffineSpec(dim=1, a=[0.25], b=[4.0], alpha=0.5)
    g = atom(models.make_affine(spec, models.identity_observable()), 0)
    assert (g.lip, g.disp) == (0.5, 2.0)


class TestHilbert:
    def test_zero_on_diagonal(self):
        assert models.hilbert_distance([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_ln3(self):
        assert models.hilbert_distance([0.5, 0.5], [0.25, 0.75]) == pytest.approx(math.log(3), abs=1e-12)
        assert models.hilbert_distance([0.25, 0.75], [0.5, 0.5]) == pytest.approx(math.log(3), abs=1e-12)

    def test_boundary_is_an_error(self):
        with pytest.raises(DomainError):
            models.hilbert_distance([1.0, 0.0], [0.5, 0.5])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 10), min_size=3, max_size=3), st.lists(st.floats(0.01, 10), min_size=3, max_size=3))
    def test_symmetric_nonnegative(self, u, v):
        y, y2 = np.array(u) / sum(u), np.array(v) / sum(v)
        d = models.hilbert_distance(y, y2)
        assert d >= 0
        assert d == pytest.approx(models.hilbert_distance(y2, y), abs=1e-12)


class TestCocycle:
    g = np.array([[2.0, 1.0], [1.0, 2.0]])

    def test_identity(self):
        assert models.cocycle(np.eye(2), [0.1, 0.9]) == 0.0

    def test_ln3(self):
        assert models.cocycle(self.g, [0.5, 0.5]) == pytest.approx(math.log(3), abs=1e-15)

    def test_square(self):
        assert models.cocycle(self.g @ self.g, [0.5, 0.5]) == pytest.approx(2 * math.log(3), abs=1e-14)

    def test_additivity_random(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            g, h = rng.uniform(0.01, 3, (2, 3, 3))
            y = rng.dirichlet(np.ones(3))
            hy = h @ y / (h @ y).sum()
            lhs = models.cocycle(g @ h, y)
            assert abs(lhs - models.cocycle(g, hy) - models.cocycle(h, y)) <= 1e-10


class TestMatrixModel:
    def test_positive_matrix_contracts(self):
        m = models.single_matrix(gamma1_hint=math.log(3))
        assert atom(m, 0).lip < 1

    def test_identity_model(self):
        m = models.identity_matrix()
        assert atom(m, 0).lip == 1.0
        assert m.m == 0.0
        assert np.all(m.xi_values(m.pi.atom_batch(), m.x0[None, :]) == 0.0)

    def test_base_point(self):
        np.testing.assert_array_equal(models.single_matrix(gamma1_hint=0.0).x0, [0.5, 0.5])

    def test_not_allowable(self):
        spec = models.PositiveMatrixSpec(dim=2, matrices=[[[1.0, 1.0], [0.0, 0.0]]])
        with pytest.raises(SpecError):
            models.make_matrix_model(spec, gamma1_hint=0.0)

    def test_gamma1_estimated(self):
        m = models.single_matrix()
        assert m.m == pytest.approx(math.log(3), abs=1e-9)
        assert m.meta["centering_source"] == "estimated"

    def test_positive_product_length(self):
        a = np.array([[1.0, 1.0], [0.0, 1.0]])
        b = np.array([[1.0, 0.0], [1.0, 1.0]])
        assert models.positive_product_length([a, b]) == 2
        assert models.positive_product_length([np.eye(2)]) is None

    def test_hilbert_contraction_sampled(self):
        m = models.single_matrix(gamma1_hint=0.0)
        rng = np.random.default_rng(4)
        x, y = m.family.sample_pairs(rng, 500)
        maps = m.pi.atom_batch().take(np.zeros(500, dtype=int))
        ratio = m.family.distance(m.step(maps, x), m.step(maps, y)) / m.family.distance(x, y)
        assert ratio.max() < 1.0

    def test_log_norm_matches_cocycle_sum(self):
        rng = np.random.default_rng(2)
        mats = rng.uniform(0.1, 2.0, (4, 2, 2))
        spec = models.PositiveMatrixSpec(dim=2, matrices=mats)
        m = models.make_matrix_model(spec, gamma1_hint=0.3)
        idx = rng.integers(0, 4, 200)
        y = m.x0.copy()
        total = 0.0
        prod = np.eye(2)
        for i in idx:
            g = m.pi.atom_batch().take([i])
            total += m.xi_values(g, y[None, :])[0]
            y = m.step(g, y[None, :])[0]
            prod = mats[i] @ prod
            prod_norm = np.log(np.abs(prod @ m.x0).sum())
        assert abs(prod_norm - (total + len(idx) * 0.3)) <= 1e-8


class TestPerron:
    @pytest.mark.parametrize("g,rho", [(np.eye(3), 1.0), ([[2, 1], [1, 2]], 3.0), (np.diag([2.0, 3.0]), 3.0),
                                       ([[1, 1], [1, 0]], (1 + math.sqrt(5)) / 2)])
    def test_values(self, g, rho):
        assert models.perron_radius(g) == pytest.approx(rho, rel=1e-11)


def test_scalar_composition_is_exact():
    m = models.make_affine(models.AffineSpec(dim=1, a=[0.2, 1.2], b=[0.0, 0.0]), models.identity_observable())
    np.testing.assert_allclose(m.family.composite_lip([{k: v[[0, 1]] for k, v in m.pi.atoms.items()},
                                                       {k: v[[1, 1]] for k, v in m.pi.atoms.items()}]),
                               [0.24, 1.44])
