import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sst

from lipclt import stats


def test_mean_estimate_weighted_exact():
    est = stats.mean_estimate([1.0, 3.0], weights=[0.25, 0.75])
    assert (est.value, est.se) == (2.5, 0.0)


def test_mean_estimate_sampled():
    x = np.random.default_rng(0).normal(size=10_000)
    est = stats.mean_estimate(x)
    assert est.se == pytest.approx(x.std(ddof=1) / 100, rel=1e-9)


def test_spearman_exact_small_n():
    rho, p, trend = stats.spearman_increasing([1, 2, 3])
    assert rho == 1.0 and p == pytest.approx(1 / 6) and not trend
    rho, p, trend = stats.spearman_increasing([1, 2, 3, 4, 5])
    assert p == pytest.approx(1 / 120) and trend


def test_spearman_decreasing_no_trend():
    assert not stats.spearman_increasing([5, 4, 3, 2, 1])[2]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=200))
def test_ks_matches_scipy(xs):
    z = np.array(xs)
    assert stats.ks_normal(z) == pytest.approx(sst.kstest(z, "norm").statistic, abs=1e-12)


def test_wasserstein_shift():
    u = np.random.default_rng(1).normal(size=5000)
    assert stats.wasserstein1(u, u + 0.3) == pytest.approx(0.3, abs=1e-12)


def test_projected_wasserstein_lower_bound():
    rng = np.random.default_rng(2)
    u = rng.normal(size=(2000, 2))
    d = stats.projected_wasserstein1(u, u + [0.3, 0.4])
    assert d <= 0.5 + 1e-12 and d > 0.45


def test_batch_means_iid():
    x = np.random.default_rng(3).normal(size=(8, 4096))
    est = stats.batch_means(x)
    assert abs(est.value) < 3 * est.se and est.se == pytest.approx(1 / math.sqrt(x.size), rel=0.3)
