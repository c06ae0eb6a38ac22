"""Asymptotic variance by two independent routes plus the coboundary test.

* batch route: extrapolate ``n^-1 E[S_n^2]`` in ``1/n``;
* Poisson route: solve ``(1 - P) w = theta`` by a truncated Neumann series
  and plug ``w`` into ``E[xi (xi + 2 w(g x))]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ProductForm, SystemModel, as_rng, spawn_seeds
from .errors import NumericalError, ParameterError
from .simulate import EmpiricalMeasure, estimate_drift, longrun_measure, simulate_sums
from .stats import Estimate, mean_estimate

log = logging.getLogger(__name__)

NEUMANN_CAP = 200
NEUMANN_RTOL = 1e-4


@dataclass
class VarianceEstimate:
    sigma2: float
    method: str
    se: float
    tail_bound: float = 0.0
    raw: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "method": self.method,
            "se": self.se,
            "tail_bound": self.tail_bound,
            "raw": self.raw,
            "diagnostics": self.diagnostics,
        }


def _clamped(raw, se, method, tail=0.0, **diag) -> VarianceEstimate:
    if raw < 0:
        if raw < -3.0 * se - tail:
            raise NumericalError(f"{method} variance {raw:.6g} is negative beyond 3 s.e. ({se:.3g})",
                                 {"raw": raw, "se": se})
        log.warning("%s variance %.3g negative within noise; clamped to 0", method, raw)
    return VarianceEstimate(max(raw, 0.0), method, se, tail, raw, diag)


# ---------------------------------------------------------------------------
# centering


def estimate_centering(model: SystemModel, n=4096, paths=64, seed=0) -> Estimate:
    """Long-run mean ``m`` of the uncentered observable."""
    return estimate_drift(model, n=n, paths=paths, seed=seed)


def center(model: SystemModel, n=4096, paths=64, seed=0) -> SystemModel:
    est = estimate_centering(model, n, paths, seed)
    return model.with_centering(est.value, source="estimated")


# ---------------------------------------------------------------------------
# theta and the Poisson equation


def theta_values(model: SystemModel, x, rng=None) -> np.ndarray:
    """``theta(x) = int xi(g, x) dpi(g)`` (centered) at each row of ``x``.

    Exact for finite supports and for observables that ignore the map;
    otherwise one fresh map per point gives an unbiased single-sample value.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if model.pi.is_finite:
        atoms = model.pi.atom_batch()
        out = np.zeros(n)
        for i, w in enumerate(model.pi.weights):
            out += w * model.xi_values(atoms.take(np.full(n, i)), x)
        return out
    maps = model.draw(as_rng(rng), n)
    return model.xi_values(maps, x)


def theta_eval(model: SystemModel, x, nsamples: int = 10_000, seed=0) -> Estimate:
    x = np.asarray(x, dtype=float).reshape(1, model.dim)
    if model.pi.is_finite:
        return Estimate(float(theta_values(model, x)[0]), 0.0, model.pi.support_size, exact=True)
    if not model.xi.depends_on_map:
        return Estimate(float(theta_values(model, x, seed)[0]), 0.0, 1, exact=True)
    maps = model.draw(as_rng(seed), nsamples)
    return mean_estimate(model.xi_values(maps, np.repeat(x, nsamples, axis=0)))


@dataclass
class PoissonSolution:
    """Neumann-series solution ``w = sum_{n<=N} P^n theta`` at ``points``."""

    points: np.ndarray
    w: np.ndarray
    se: np.ndarray
    truncation: int
    tail_bound: float
    kappa: float
    envelope: list

    def to_dict(self):
        return {
            "points": self.points.tolist(),
            "w": self.w.tolist(),
            "se": self.se.tolist(),
            "truncation": self.truncation,
            "tail_bound": self.tail_bound,
            "kappa": self.kappa,
            "envelope": self.envelope,
        }


def _fit_envelope(env, window=10):
    """Geometric fit ``D_n ~ C kappa^n`` on the last ``window`` positive terms."""
    n = np.arange(len(env))
    d = np.asarray(env)
    keep = d > 0
    idx = n[keep][-window:]
    if len(idx) < 3:
        return None, None
    slope, icpt = np.polyfit(idx, np.log(d[idx]), 1)
    return math.exp(slope), math.exp(icpt)


def solve_poisson(model: SystemModel, eval_points, truncation: int | None = None, paths: int = 256,
                  seed=0, nu_hat: EmpiricalMeasure | None = None, rtol: float = NEUMANN_RTOL,
                  cap: int = NEUMANN_CAP) -> PoissonSolution:
    """Estimate ``w(x) = sum_n E[theta(R_n x)]`` at each evaluation point.

    Each point gets ``paths`` trajectories; every trajectory is coupled (same
    maps) with a trajectory started from a draw ``z ~ nu_hat`` and the term
    ``theta(R_n z)`` is subtracted.  Because ``nu(P^n theta) = 0`` this leaves
    the mean unchanged while the coupled differences contract, so both the
    terms and their noise decay geometrically.

    ``truncation=None`` picks ``N`` adaptively: stop once the fitted
    geometric envelope of the RMS term predicts a tail below ``rtol`` times
    the RMS partial sum (at most ``cap`` terms).
    """
    pts = np.asarray(eval_points, dtype=float).reshape(-1, model.dim)
    k = len(pts)
    rng = as_rng(seed)
    if nu_hat is None:
        nu_hat = longrun_measure(model, 4096, seed=spawn_seeds(seed, 1)[0])
    x = np.repeat(pts, paths, axis=0)
    z = nu_hat.sample(rng, k * paths)
    total = np.zeros(k * paths)
    env = []
    n_max = truncation if truncation is not None else cap
    kappa, tail, n_used = math.nan, 0.0, 0
    for n in range(n_max + 1):
        theta_rng = rng if not model.pi.is_finite else None
        if theta_rng is not None:
            # one shared map per coupled pair keeps the single-sample theta coupled as well
            maps = model.draw(rng, k * paths)
            d = model.xi_values(maps, x) - model.xi_values(maps, z)
        else:
            d = theta_values(model, x) - theta_values(model, z)
        total += d
        env.append(float(np.sqrt(np.mean(d**2))))
        n_used = n
        if truncation is None and n >= 4:
            if env[-1] == 0.0:
                kappa, tail = 0.0, 0.0
                break
            kap, c = _fit_envelope(env)
            if kap is not None and kap < 1.0:
                tail = c * kap ** (n + 1) / (1.0 - kap)
                scale = float(np.sqrt(np.mean(total**2)))
                kappa = kap
                if tail <= rtol * max(scale, 1e-300):
                    break
            elif n >= 20:
                raise NumericalError("P^n theta does not decay geometrically",
                                     {"envelope": env, "kappa": kap})
        if n == n_max:
            break
        maps = model.draw(rng, k * paths)
        x = model.step(maps, x)
        z = model.step(maps, z)
    if truncation is not None:
        kap, c = _fit_envelope(env)
        if kap is not None and kap < 1.0:
            kappa, tail = kap, c * kap ** (n_used + 1) / (1.0 - kap)
        elif env[-1] == 0.0:
            kappa, tail = 0.0, 0.0
        else:
            kappa, tail = math.nan, math.inf
    elif n_used == cap and not (tail <= rtol * max(float(np.sqrt(np.mean(total**2))), 1e-300)):
        log.warning("Neumann series hit the cap N=%d with tail bound %.3g", cap, tail)
    per_path = total.reshape(k, paths)
    w = per_path.mean(axis=1)
    se = per_path.std(axis=1, ddof=1) / math.sqrt(paths) if paths > 1 else np.full(k, math.inf)
    return PoissonSolution(pts, w, se, n_used, float(tail), float(kappa), env)


def poisson_residual(model: SystemModel, points, paths: int = 256, seed=0, nu_hat=None,
                     images: int = 16) -> dict:
    """Check ``w - theta - P w = 0`` at ``points``.

    ``P w`` averages ``w`` over all atoms (finite laws) or ``images`` sampled
    maps.  Returns the max absolute residual and the allowance
    ``tail_bound + 3 se``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, model.dim)
    k = len(pts)
    rng = as_rng(seed)
    if model.pi.is_finite:
        atoms = model.pi.atom_batch()
        j = model.pi.support_size
        weights = model.pi.weights
        maps = atoms.take(np.tile(np.arange(j), k))
    else:
        j = images
        weights = np.full(j, 1.0 / j)
        maps = model.draw(rng, k * j)
    img = model.step(maps, np.repeat(pts, j, axis=0))
    th = theta_eval_many(model, pts, rng)
    sol = solve_poisson(model, np.vstack([pts, img]), paths=paths, seed=spawn_seeds(seed, 2)[1],
                        nu_hat=nu_hat)
    w_x, se_x = sol.w[:k], sol.se[:k]
    w_img = sol.w[k:].reshape(k, j)
    se_img = sol.se[k:].reshape(k, j)
    pw = w_img @ weights
    pw_se = np.sqrt((se_img**2) @ (weights**2))
    if not model.pi.is_finite:
        pw_se = np.sqrt(pw_se**2 + w_img.var(axis=1, ddof=1) / j)
    resid = w_x - th - pw
    se = np.sqrt(se_x**2 + pw_se**2)
    allowance = sol.tail_bound + 3.0 * se
    return {
        "max_abs_residual": float(np.max(np.abs(resid))),
        "max_excess": float(np.max(np.abs(resid) - allowance)),
        "ok": bool(np.all(np.abs(resid) <= allowance)),
        "tail_bound": sol.tail_bound,
        "truncation": sol.truncation,
    }


def theta_eval_many(model, pts, rng, nsamples=256):
    if model.pi.is_finite or not model.xi.depends_on_map:
        return theta_values(model, pts, rng)
    reps = np.repeat(pts, nsamples, axis=0)
    vals = model.xi_values(model.draw(rng, len(reps)), reps)
    return vals.reshape(len(pts), nsamples).mean(axis=1)


def sigma2_poisson(model: SystemModel, nu_hat: EmpiricalMeasure | None = None, points: int = 32_768,
                   paths: int = 1, seed=0, truncation: int | None = None, images: int = 1) -> VarianceEstimate:
    """``sigma^2 = E_{x~nu, g~pi}[xi(g, x) (xi(g, x) + 2 w(g x))]``.

    ``w`` is solved at the one-step images of ``points`` draws from
    ``nu_hat``; finite laws average over every atom exactly.
    """
    s0, s1, s2, s3 = spawn_seeds(seed, 4)
    if nu_hat is None:
        nu_hat = longrun_measure(model, max(points, 4096), seed=s0)
    rng = np.random.default_rng(s1)
    x = nu_hat.sample(rng, points)
    if model.pi.is_finite:
        j = model.pi.support_size
        weights = model.pi.weights
        maps = model.pi.atom_batch().take(np.tile(np.arange(j), points))
    else:
        j = images
        weights = np.full(j, 1.0 / j)
        maps = model.draw(rng, points * j)
    xr = np.repeat(x, j, axis=0)
    xi = model.xi_values(maps, xr)
    img = model.step(maps, xr)
    sol = solve_poisson(model, img, truncation=truncation, paths=paths, seed=s2, nu_hat=nu_hat)
    vals = (xi * (xi + 2.0 * sol.w)).reshape(points, j) @ weights
    est = mean_estimate(vals)
    return _clamped(
        est.value, est.se, "poisson", sol.tail_bound,
        points=points, paths=paths, truncation=sol.truncation, kappa=sol.kappa,
        mean_xi=float(np.mean(xi)),
    )


# ---------------------------------------------------------------------------
# batch route


def sigma2_batch(model: SystemModel, init=None, n_grid=(1024, 4096, 16384), paths: int = 4096,
                 seed=0, threads=None) -> VarianceEstimate:
    """Fit ``n^-1 E[S_n^2] = a + b / n`` over ``n_grid`` and return ``a``.

    All grid points share the same paths; the standard error of ``a`` is
    the per-path spread of the fitted linear combination, which accounts for
    the correlation across ``n``.
    """
    grid = sorted(int(n) for n in n_grid)
    if len(grid) < 3 or len(set(grid)) != len(grid):
        raise ParameterError("n_grid needs at least 3 distinct values")
    sums, *_ = simulate_sums(model, init, grid, paths, seed, threads)
    y = sums**2 / np.asarray(grid, dtype=float)
    design = np.column_stack([np.ones(len(grid)), 1.0 / np.asarray(grid, dtype=float)])
    coef = np.linalg.pinv(design)
    per_path = y @ coef[0]
    a = float(per_path.mean())
    se = float(per_path.std(ddof=1) / math.sqrt(paths))
    return _clamped(
        a, se, "batch",
        n_grid=grid, per_n=[float(v) for v in y.mean(axis=0)],
        slope=float((y @ coef[1]).mean()), paths=paths,
    )


# ---------------------------------------------------------------------------
# degeneracy


@dataclass
class DegeneracyReport:
    verdict: str
    reason: str
    residual: float | None = None
    relative_residual: float | None = None
    coefficients: list | None = None
    basis: str | None = None

    def to_dict(self):
        return dict(self.__dict__)

    def recovered(self, x):
        """Evaluate the fitted ``xi~_1`` (up to an additive constant)."""
        if self.coefficients is None:
            raise ParameterError("no coboundary fit available")
        x = np.asarray(x, dtype=float)
        x = x.reshape(len(x), -1) if x.ndim else x.reshape(1, 1)
        degree = len(self.coefficients) // x.shape[1]
        return _basis(x, degree) @ np.asarray(self.coefficients)


def _basis(x, degree):
    """Monomials ``x_j^p`` for ``p = 1..degree`` (no constant: it cancels in coboundaries)."""
    return np.column_stack([x[:, j] ** p for j in range(x.shape[1]) for p in range(1, degree + 1)])


def fit_coboundary(model: SystemModel, nu_hat: EmpiricalMeasure, points: int = 2000, degree: int = 3, seed=0):
    """Least-squares fit of ``xi(g, x) = f(x) - f(g x)`` with ``f`` polynomial.

    Returns ``(coefficients, rms residual, relative rms residual)``.
    """
    rng = as_rng(seed)
    x = nu_hat.sample(rng, points)
    maps = model.draw(rng, points)
    xi = model.xi_values(maps, x)
    gx = model.step(maps, x)
    a = _basis(x, degree) - _basis(gx, degree)
    coef, *_ = np.linalg.lstsq(a, xi, rcond=None)
    res = xi - a @ coef
    rms = float(np.sqrt(np.mean(res**2)))
    scale = float(np.sqrt(np.mean(xi**2)))
    return coef, rms, (rms / scale if scale > 0 else 0.0)


def degeneracy_test(model: SystemModel, est_batch: VarianceEstimate, est_poisson: VarianceEstimate | None,
                    nu_hat: EmpiricalMeasure, product_form=None, zero_tol: float = 0.01,
                    fit_tol: float = 1e-6, seed=0) -> DegeneracyReport:
    """Classify the model as nondegenerate, coboundary-suspected or inconclusive.

    ``product_form`` is ``(u_values, chi)`` for ``xi = u(g) chi(x)``; it is
    picked up automatically from a :class:`~lipclt.core.ProductForm`
    observable on a finite law.
    """
    if product_form is None and isinstance(model.xi, ProductForm) and model.pi.is_finite:
        product_form = (model.xi.u_values(model.pi.atom_batch()), model.xi.chi)
    if product_form is not None:
        u, chi = product_form
        u = np.asarray(u, dtype=float)
        pu = float(u @ model.pi.weights) if model.pi.is_finite else float(u.mean())
        chi_vals = np.ones(len(nu_hat.points)) if chi is None else np.asarray(chi(nu_hat.points))
        if abs(pu) <= 1e-12 and np.any(np.abs(chi_vals) > 1e-12):
            return DegeneracyReport(
                "nondegenerate",
                "sigma^2 > 0 guaranteed: xi = u(g) chi(x) with pi(u) = 0 and chi != 0 on the support",
            )
    ests = [e for e in (est_batch, est_poisson) if e is not None]
    if all(e.sigma2 - 3.0 * e.se > zero_tol for e in ests):
        return DegeneracyReport("nondegenerate", "variance estimates are bounded away from 0")
    if all(e.sigma2 <= zero_tol + 3.0 * e.se for e in ests):
        coef, rms, rel = fit_coboundary(model, nu_hat, seed=seed)
        verdict = "degenerate-coboundary-suspected" if rms <= fit_tol else "inconclusive"
        return DegeneracyReport(
            verdict, "variance estimates vanish; polynomial coboundary fit",
            rms, rel, [float(c) for c in coef], "monomials x^1..x^3 per coordinate",
        )
    return DegeneracyReport("inconclusive", "variance estimates disagree about positivity")
