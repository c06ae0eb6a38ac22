"""Small statistical helpers shared by the estimators."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as sps

CONFIDENCE = 2.0


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo (or exact, ``se == 0``) estimate."""

    value: float
    se: float = 0.0
    n: int = 0
    nonfinite: int = 0
    exact: bool = False

    def upper(self, k: float = CONFIDENCE) -> float:
        return self.value + k * self.se

    def lower(self, k: float = CONFIDENCE) -> float:
        return self.value - k * self.se

    def to_dict(self) -> dict:
        return asdict(self)


def mean_estimate(samples, weights=None) -> Estimate:
    """Mean with standard error; non-finite samples are dropped and counted.

    With ``weights`` the samples are atoms of a finite law and the result is
    their exact weighted sum.
    """
    x = np.asarray(samples, dtype=float)
    ok = np.isfinite(x)
    bad = int((~ok).sum())
    if weights is not None:
        w = np.asarray(weights, dtype=float)[ok]
        return Estimate(float(np.dot(w, x[ok]) / w.sum()), 0.0, len(x), bad, True)
    x = x[ok]
    if len(x) == 0:
        return Estimate(math.nan, math.inf, 0, bad)
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.inf
    return Estimate(float(x.mean()), se, len(x), bad)


def batch_means(series, batch_size=None) -> Estimate:
    """Mean of a (possibly multi-chain) time series with a batch-means standard error.

    ``series`` is ``(chains, length)`` or 1-D.  Batches never straddle chains.
    """
    x = np.atleast_2d(np.asarray(series, dtype=float))
    length = x.shape[1]
    b = batch_size or max(1, int(math.sqrt(length)))
    nb = length // b
    if nb < 2 and x.shape[0] < 2:
        return Estimate(float(x.mean()), math.inf, x.size)
    means = x[:, : nb * b].reshape(x.shape[0], nb, b).mean(axis=2).ravel()
    se = float(means.std(ddof=1) / math.sqrt(len(means))) if len(means) > 1 else math.inf
    return Estimate(float(x.mean()), se, x.size)


def checkpoint_means(samples, k=10) -> np.ndarray:
    """Running means at ``k`` logarithmically spaced sample counts."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    marks = np.unique(np.geomspace(max(10, n // 100), n, k).astype(int))
    csum = np.cumsum(x)
    return csum[marks - 1] / marks


def ks_normal(z) -> float:
    """Exact ``sup_u |F_n(u) - Phi(u)|`` over the sorted sample."""
    z = np.sort(np.asarray(z, dtype=float))
    n = len(z)
    cdf = sps.norm.cdf(z)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


def spearman_increasing(values, level=0.05) -> tuple[float, float, bool]:
    """Spearman correlation of ``values`` against their index and whether an
    increasing trend is significant at ``level`` (one-sided).
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 3:
        return math.nan, 1.0, False
    rho = float(sps.spearmanr(np.arange(n), values).statistic)
    if not np.isfinite(rho):
        return 0.0, 1.0, False
    # exact permutation null for the small grids used here
    p = _spearman_pvalue(values, rho)
    return rho, p, bool(rho > 0 and p < level)


def _spearman_pvalue(values, rho):
    import itertools

    n = len(values)
    if n > 8:
        t = rho * math.sqrt((n - 2) / max(1e-300, 1 - rho**2))
        return float(sps.t.sf(t, n - 2))
    ranks = sps.rankdata(values)
    idx = np.arange(n)
    count = total = 0
    for perm in itertools.permutations(ranks):
        r = sps.spearmanr(idx, perm).statistic
        total += 1
        count += r >= rho - 1e-12
    return count / total


def wasserstein1(u, v) -> float:
    """W1 between two 1-D samples (exact sorted-sample formula)."""
    return float(sps.wasserstein_distance(np.ravel(u), np.ravel(v)))


def projected_wasserstein1(u, v, projections=20, seed=0) -> float:
    """W1 for 1-D samples; for ``dim > 1`` the max over random unit-vector projections.

    The projected value is a lower bound on the true W1.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.ndim == 1 or u.shape[1] == 1:
        return wasserstein1(u, v)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(projections, u.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return max(wasserstein1(u @ d, v @ d) for d in dirs)
