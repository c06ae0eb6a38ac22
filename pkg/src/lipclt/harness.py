"""Statistical checks of the central and local limit theorems at desk scale."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import SystemModel, as_rng
from .errors import HypothesisFailure, ParameterError, UnsupportedModelError
from .simulate import simulate_sums
from .stats import ks_normal, spearman_increasing

log = logging.getLogger(__name__)

KS_95 = 1.36


def _sigma2_value(sigma2):
    if hasattr(sigma2, "sigma2"):
        return float(sigma2.sigma2), getattr(sigma2, "method", "estimate")
    return float(sigma2), "given"


def _require_positive(sigma2):
    if not sigma2 > 0:
        raise HypothesisFailure(
            f"sigma^2 = {sigma2:g}: the model is degenerate (or the estimate vanished); "
            "run the variance module's degeneracy test instead",
            {"sigma2": sigma2},
        )


# ---------------------------------------------------------------------------
# CLT / Berry-Esseen


@dataclass
class CLTReport:
    n_grid: list
    ks: list
    ks_sqrt_n: list
    paths: list
    sigma2: float
    sigma2_source: str
    spearman_rho: float
    spearman_p: float
    verdict: str
    footnote: str = ("The Berry-Esseen constant depends on the initial law through "
                     "E[d(Z, x0)^(gamma0+1)]; the maximum of D_n sqrt(n) is reported without attribution.")

    def to_dict(self):
        return dict(self.__dict__)

    def rows(self):
        return [{"n": n, "ks": d, "ks_sqrt_n": ds, "paths": p}
                for n, d, ds, p in zip(self.n_grid, self.ks, self.ks_sqrt_n, self.paths)]


def ks_report(normalised: np.ndarray, n_grid, sigma2, source) -> CLTReport:
    """KS distances of each column of ``normalised`` against N(0, 1) plus the trend test."""
    ks = [ks_normal(normalised[:, j]) for j in range(normalised.shape[1])]
    scaled = [d * math.sqrt(n) for d, n in zip(ks, n_grid)]
    rho, p, trend = spearman_increasing(scaled)
    return CLTReport(list(n_grid), ks, scaled, [len(normalised)] * len(n_grid), sigma2, source,
                     rho, p, "BE-inconsistent" if trend else "BE-consistent")


def clt_test(model: SystemModel, sigma2, n_grid=(256, 1024, 4096), paths: int = 20_000, seed=0,
             init=None, threads=None) -> CLTReport:
    """KS distance of ``S_n / (sigma sqrt(n))`` from N(0, 1) along ``n_grid``.

    The verdict is ``BE-consistent`` unless ``D_n sqrt(n)`` shows an
    increasing trend (one-sided Spearman test at 5%).
    """
    s2, source = _sigma2_value(sigma2)
    _require_positive(s2)
    grid = sorted(int(n) for n in n_grid)
    sums, *_ = simulate_sums(model, init, grid, paths, seed, threads)
    z = sums / np.sqrt(s2 * np.asarray(grid, dtype=float))
    return ks_report(z, grid, s2, source)


def null_calibration(paths: int = 20_000, reps: int = 100, seed=0) -> dict:
    """KS distances of genuine N(0, 1) samples against the ``1.36 / sqrt(paths)`` bound.

    ``ok`` demands at least 95% of repetitions inside the bound.  Since the
    bound is itself a 95% quantile, ``coverage_p`` (two-sided binomial test
    of the count against the exact coverage) is reported alongside.
    """
    rng = as_rng(seed)
    bound = KS_95 / math.sqrt(paths)
    ks = np.array([ks_normal(rng.standard_normal(paths)) for _ in range(reps)])
    inside = int((ks <= bound).sum())
    coverage = float(stats.kstwo.cdf(bound, paths))
    return {
        "paths": paths,
        "reps": reps,
        "bound": bound,
        "within": inside,
        "fraction": inside / reps,
        "expected_coverage": coverage,
        "coverage_p": float(stats.binomtest(inside, reps, coverage).pvalue),
        "quantile_95": float(np.quantile(ks, 0.95)),
        "max": float(ks.max()),
        "ok": inside >= math.ceil(0.95 * reps),
    }


# ---------------------------------------------------------------------------
# local CLT


@dataclass(frozen=True)
class HFunction:
    """Built-in ``h`` with ``u^2 h(u) -> 0`` and its exact Lebesgue integral."""

    name: str
    integral: float
    fn: object = field(repr=False, compare=False)

    def __call__(self, u):
        return self.fn(np.asarray(u, dtype=float))


H_FAMILIES = {
    "gaussian": HFunction("gaussian", math.sqrt(2.0 * math.pi), lambda u: np.exp(-0.5 * u * u)),
    "triangle": HFunction("triangle", 1.0, lambda u: np.maximum(0.0, 1.0 - np.abs(u))),
    "raised_cosine": HFunction(
        "raised_cosine", 1.0, lambda u: np.where(np.abs(u) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * u)), 0.0)
    ),
}


def h_function(h_id: str) -> HFunction:
    try:
        return H_FAMILIES[h_id]
    except KeyError:
        raise ParameterError(f"unknown test function {h_id!r}; choose from {sorted(H_FAMILIES)}") from None


@dataclass
class LocalCLTReport:
    h: str
    integral: float
    n_grid: list
    values: list
    se: list
    gaps: list
    allowance: float
    sigma2: float
    verdict: str
    nonarithmetic: str

    def to_dict(self):
        return dict(self.__dict__)

    def rows(self):
        return [{"n": n, "value": v, "se": s, "gap": g}
                for n, v, s, g in zip(self.n_grid, self.values, self.se, self.gaps)]


def nonarithmetic_status(model: SystemModel, peripheral=None, grid_size: int = 257) -> str:
    """Verdict of the peripheral scan, or ``"unverified"`` when no operator route exists."""
    if peripheral is not None:
        return peripheral if isinstance(peripheral, str) else peripheral.verdict
    from . import spectral

    try:
        grid = spectral.make_grid(model, grid_size)
        return spectral.peripheral_scan(model, grid).verdict
    except UnsupportedModelError:
        return "unverified"


def local_clt_test(model: SystemModel, sigma2, h_id: str = "gaussian", n_grid=(1024, 4096),
                   paths: int = 100_000, seed=0, override: bool = False, peripheral=None,
                   init=None, threads=None) -> LocalCLTReport:
    """``sigma sqrt(2 pi n) E[h(S_n)]`` against ``L(h)`` along ``n_grid``.

    Refuses models flagged arithmetic by the peripheral scan unless
    ``override``.  Laws without an operator route are recorded as
    ``unverified`` and tested anyway.  The verdict allows 3 s.e. plus a trend
    allowance of half the change between the last two grid points.
    """
    s2, _ = _sigma2_value(sigma2)
    _require_positive(s2)
    h = h_function(h_id)
    status = "override" if override else nonarithmetic_status(model, peripheral)
    if status == "arithmetic-suspect":
        raise HypothesisFailure(
            "the model is arithmetic-suspect: the nonarithmeticity condition fails "
            "(P(t) has spectral radius 1 for some t != 0); pass override=True to force the test",
            {"model": model.name},
        )
    grid = sorted(int(n) for n in n_grid)
    sums, *_ = simulate_sums(model, init, grid, paths, seed, threads)
    sigma = math.sqrt(s2)
    values, ses, gaps = [], [], []
    for j, n in enumerate(grid):
        scale = sigma * math.sqrt(2.0 * math.pi * n)
        hv = h(sums[:, j])
        values.append(float(scale * hv.mean()))
        ses.append(float(scale * hv.std(ddof=1) / math.sqrt(paths)))
        gaps.append(abs(values[-1] - h.integral))
    allowance = 0.5 * abs(values[-1] - values[-2]) if len(values) > 1 else 0.0
    verdict = "consistent" if gaps[-1] <= 3.0 * ses[-1] + allowance else "inconsistent"
    return LocalCLTReport(h.name, h.integral, grid, values, ses, gaps, allowance, s2, verdict, status)
