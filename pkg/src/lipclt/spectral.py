"""Grid discretisation of the Markov kernel ``P`` and the Fourier kernels ``P(t)``.

``(P(t) f)(x) = sum_i p_i exp(i t xi(g_i, x)) f(g_i x)`` is represented on a
grid of nodes with piecewise-linear interpolation, so ``P(0)`` is exactly a
stochastic matrix.  States are one-dimensional; matrix models on the
two-dimensional simplex are parametrised by their first coordinate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import SystemModel, as_rng
from .errors import AmbiguousDominanceError, NumericalError, ParameterError, UnsupportedModelError
from .models import MatrixFamily, perron_radius
from .simulate import EmpiricalMeasure, longrun_measure

log = logging.getLogger(__name__)

POWER_TOL = 1e-15
POWER_MAXITER = 3000
RATIONAL_QMAX = 10**6
RATIONAL_TOL = 1e-12
RATIONAL_SIGNIFICANCE = 1e-3


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class OperatorGrid:
    """Sorted 1-D nodes; ``simplex=True`` means node ``u`` is the state ``(u, 1 - u)``."""

    nodes: np.ndarray
    simplex: bool = False
    interpolation: str = "piecewise-linear"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise ParameterError("grid needs at least two 1-D nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ParameterError("grid nodes must be distinct and increasing")
        object.__setattr__(self, "nodes", nodes)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def window(self) -> tuple[float, float]:
        return float(self.nodes[0]), float(self.nodes[-1])

    def states(self) -> np.ndarray:
        u = self.nodes[:, None]
        return np.hstack([u, 1.0 - u]) if self.simplex else u

    def coordinate(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[:, 0]

    def weights(self, x):
        """Interpolation ``(left index, right weight, leaked)`` for states ``x``.

        Points outside the window are clamped to the boundary node.
        """
        u = self.coordinate(x)
        lo, hi = self.window
        leaked = (u < lo) | (u > hi)
        u = np.clip(u, lo, hi)
        j = np.clip(np.searchsorted(self.nodes, u, side="right") - 1, 0, self.size - 2)
        left, right = self.nodes[j], self.nodes[j + 1]
        return j, (u - left) / (right - left), leaked

    def interpolate(self, values, x) -> np.ndarray:
        j, w, _ = self.weights(x)
        values = np.asarray(values)
        return (1.0 - w) * values[j] + w * values[j + 1]

    def project(self, points, weights=None) -> np.ndarray:
        """Hat-function projection of a measure onto node masses."""
        j, w, _ = self.weights(points)
        m = np.full(len(j), 1.0 / len(j)) if weights is None else np.asarray(weights, dtype=float)
        out = np.zeros(self.size)
        np.add.at(out, j, m * (1.0 - w))
        np.add.at(out, j + 1, m * w)
        return out / out.sum()

    def refined(self) -> "OperatorGrid":
        mid = 0.5 * (self.nodes[1:] + self.nodes[:-1])
        return OperatorGrid(np.sort(np.concatenate([self.nodes, mid])), self.simplex, self.interpolation)

    def to_dict(self):
        return {"size": self.size, "window": list(self.window), "simplex": self.simplex,
                "interpolation": self.interpolation}


def _require_operator_model(model: SystemModel):
    if not model.pi.is_finite:
        raise UnsupportedModelError(
            f"{model.name}: operator routes need a finite-support map law; "
            "use the Monte Carlo variance and harness routes instead"
        )
    simplex = isinstance(model.family, MatrixFamily)
    if simplex and model.dim != 2:
        raise UnsupportedModelError("operator grids support matrix models of dimension 2 only")
    if not simplex and model.dim != 1:
        raise UnsupportedModelError("operator grids support one-dimensional state spaces only")
    return simplex


def make_grid(model: SystemModel, size: int = 513, window=None, nu_hat: EmpiricalMeasure | None = None,
              seed=0) -> OperatorGrid:
    """Uniform grid on ``window``; by default the 0.5%-99.5% quantiles of ``nu_hat`` padded by 10%."""
    simplex = _require_operator_model(model)
    if size < 2:
        raise ParameterError("grid size must be >= 2")
    if window is None:
        if nu_hat is None:
            nu_hat = longrun_measure(model, 8192, seed=seed)
        u = nu_hat.points[:, 0]
        lo, hi = np.quantile(u, [0.005, 0.995])
        pad = 0.1 * (hi - lo)
        if pad == 0.0:
            pad = 0.5 if not simplex else 0.05
        lo, hi = lo - pad, hi + pad
        if simplex:
            lo, hi = max(lo, 1e-9), min(hi, 1.0 - 1e-9)
        window = (lo, hi)
    lo, hi = map(float, window)
    if not hi > lo:
        raise ParameterError(f"empty window {window}")
    return OperatorGrid(np.linspace(lo, hi, size), simplex)


# ---------------------------------------------------------------------------
# operators


@dataclass
class FourierMatrix:
    t: float
    entries: np.ndarray
    grid: OperatorGrid
    leak: float = 0.0
    kind: str = "P(t)"

    def apply(self, f) -> np.ndarray:
        return self.entries @ f

    def to_dict(self):
        return {"t": self.t, "kind": self.kind, "leak": self.leak, "grid": self.grid.to_dict(),
                "real": self.entries.real.tolist(), "imag": self.entries.imag.tolist()}


def _rows(model: SystemModel, grid: OperatorGrid, x, weight_fn):
    """Rows ``sum_i p_i weight_fn(xi_i) * interp(g_i x)`` for states ``x``; also the leaked mass."""
    n = len(x)
    atoms = model.pi.atom_batch()
    out = np.zeros((n, grid.size), dtype=complex)
    leak = 0.0
    rows = np.arange(n)
    for i, p in enumerate(model.pi.weights):
        maps = atoms.take(np.full(n, i))
        xi = model.xi_values(maps, x)
        c = p * weight_fn(xi)
        j, w, leaked = grid.weights(model.step(maps, x))
        np.add.at(out, (rows, j), c * (1.0 - w))
        np.add.at(out, (rows, j + 1), c * w)
        leak = max(leak, float(p * leaked.mean()))
    return out, leak


def _fourier_weight(t):
    # cos + i sin keeps P(-t) the exact conjugate of P(t)
    return lambda xi: np.cos(t * xi) + 1j * np.sin(t * xi)


def build_operator(model: SystemModel, grid: OperatorGrid, t: float = 0.0) -> FourierMatrix:
    _require_operator_model(model)
    entries, leak = _rows(model, grid, grid.states(), _fourier_weight(float(t)))
    if leak > 0:
        log.info("P(%g): %.3g of the image mass leaves the window and is clamped", t, leak)
    if t == 0.0:
        entries = entries.real.astype(complex)
    return FourierMatrix(float(t), entries, grid, leak)


def derivative_kernel(model: SystemModel, grid: OperatorGrid, k: int) -> FourierMatrix:
    """``(L_k f)(x) = sum_i p_i (i xi(g_i, x))^k f(g_i x)`` on the grid."""
    _require_operator_model(model)
    if k < 1:
        raise ParameterError("k must be >= 1")
    entries, leak = _rows(model, grid, grid.states(), lambda xi: (1j * xi) ** k)
    return FourierMatrix(0.0, entries, grid, leak, kind=f"L_{k}")


def taylor_residuals(model: SystemModel, grid: OperatorGrid, order: int, ts=(0.2, 0.1, 0.05, 0.025)) -> dict:
    """Entrywise max of ``P(t) - P - sum_{k<=order} t^k/k! L_k`` over a decreasing ``t`` ladder.

    Reports the raw residual, its ratio per halving and the residual scaled
    by ``|t|^order`` (which should tend to 0).
    """
    p0 = build_operator(model, grid, 0.0).entries
    kernels = [derivative_kernel(model, grid, k).entries for k in range(1, order + 1)]
    raw = []
    for t in ts:
        approx = p0.copy()
        for k, lk in enumerate(kernels, start=1):
            approx = approx + (t**k / math.factorial(k)) * lk
        raw.append(float(np.max(np.abs(build_operator(model, grid, t).entries - approx))))
    ratios = [raw[i] / raw[i + 1] if raw[i + 1] > 0 else math.inf for i in range(len(raw) - 1)]
    return {
        "order": order,
        "t": list(ts),
        "residual": raw,
        "scaled": [r / abs(t) ** order for r, t in zip(raw, ts)],
        "ratios": ratios,
    }


# ---------------------------------------------------------------------------
# eigenvalues


@dataclass
class EigenResult:
    value: complex
    vector: np.ndarray
    gap: float
    second: float
    iterations: int

    def to_dict(self):
        return {"re": self.value.real, "im": self.value.imag, "modulus": abs(self.value),
                "gap": self.gap, "second_modulus": self.second, "iterations": self.iterations}


def _power(a, v0, tol=POWER_TOL, maxiter=POWER_MAXITER):
    """Power iteration; returns ``(eigenvalue, unit vector, iterations)`` or raises on stagnation."""
    v = v0 / np.linalg.norm(v0)
    lam = 0j
    for it in range(1, maxiter + 1):
        w = a @ v
        lam_new = np.vdot(v, w)  # Rayleigh quotient
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0j, v, it
        w = w / nrm
        if it > 2 and abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)) and np.linalg.norm(a @ w - lam_new * w) <= 1e-10 * max(1.0, abs(lam_new)):
            return lam_new, w, it
        v, lam = w, lam_new
    return None, v, maxiter


def _top_moduli(a, k=2):
    ev = np.linalg.eigvals(a)
    order = np.argsort(-np.abs(ev))
    return ev[order[:k]]


def _dense_leading(a, t):
    """Fallback when power iteration is slow: dense eigenvalues, then inverse iteration."""
    cands = _top_moduli(a)
    if len(cands) > 1 and abs(cands[0]) - abs(cands[1]) <= 1e-9 * max(abs(cands[0]), 1e-300):
        raise AmbiguousDominanceError(f"two near-equal dominant moduli at t={t}", [complex(c) for c in cands])
    n = len(a)
    shift = cands[0] * (1 + 1e-10) + 1e-14
    v = np.ones(n, dtype=complex)
    for _ in range(3):
        v = np.linalg.solve(a - shift * np.eye(n), v)
        v /= np.linalg.norm(v)
    return complex(np.vdot(v, a @ v)), v


def _second_modulus(a, lam, v, u, iters=400):
    """Spectral radius of the deflated matrix ``a - lam v u^H / (u^H v)`` from norm growth."""
    b = a - lam * np.outer(v, u.conj()) / np.vdot(u, v)
    x = np.random.default_rng(12345).normal(size=len(v)).astype(complex)
    x /= np.linalg.norm(x)
    logs = []
    for _ in range(iters):
        x = b @ x
        nrm = np.linalg.norm(x)
        if nrm == 0.0:
            return 0.0
        logs.append(math.log(nrm))
        x /= nrm
    tail = logs[-50:]
    return float(math.exp(np.mean(tail)))


def leading_eigen(mat: FourierMatrix, nu_hat: EmpiricalMeasure | None = None,
                  tol: float = POWER_TOL) -> EigenResult:
    """Dominant eigenvalue of ``mat`` and a deflation estimate of the gap.

    The eigenvector is scaled so its ``nu_hat``-weighted average is 1 (the
    stationary vector of ``P(0)`` when ``nu_hat`` is omitted).
    """
    a = mat.entries
    n = len(a)
    lam, v, it = _power(a, np.ones(n, dtype=complex), tol)
    if lam is None:
        lam, v = _dense_leading(a, mat.t)
    lam_l, u, _ = _power(a.conj().T, np.ones(n, dtype=complex), tol)
    if lam_l is None:
        _, u = _dense_leading(a.conj().T, mat.t)
    second = _second_modulus(a, lam, v, u)
    if second >= abs(lam) * (1.0 - 1e-9) and abs(lam) > 0:
        raise AmbiguousDominanceError(f"two near-equal dominant moduli at t={mat.t}",
                                      [complex(lam), second])
    if nu_hat is not None:
        weights = mat.grid.project(nu_hat.points, nu_hat.weights)
    else:
        weights = stationary_vector(mat.grid, a if mat.t == 0.0 else None)
    avg = weights @ v
    if abs(avg) < 1e-300:
        raise NumericalError("eigenvector has zero nu-average", {"t": mat.t})
    return EigenResult(complex(lam), v / avg, float(abs(lam) - second), second, it)


def stationary_vector(grid: OperatorGrid, p0=None, model=None) -> np.ndarray:
    """Left Perron vector of ``P(0)`` normalised to a probability vector."""
    if p0 is None:
        if model is None:
            return np.full(grid.size, 1.0 / grid.size)
        p0 = build_operator(model, grid, 0.0).entries
    lam, u, _ = _power(np.asarray(p0).T.astype(complex), np.ones(grid.size, dtype=complex))
    u = np.real(u)
    return u / u.sum()


def eigen_scan(model: SystemModel, grid: OperatorGrid, ts, nu_hat=None) -> list[dict]:
    """Per-``t`` table of ``lambda(t)`` and the gap; ambiguity is recorded, not raised."""
    rows = []
    for t in ts:
        mat = build_operator(model, grid, float(t))
        try:
            e = leading_eigen(mat, nu_hat)
            rows.append({"t": float(t), "re": e.value.real, "im": e.value.imag,
                         "modulus": abs(e.value), "gap": e.gap, "leak": mat.leak})
        except AmbiguousDominanceError as err:
            mods = [abs(complex(c)) for c in err.candidates]
            rows.append({"t": float(t), "re": math.nan, "im": math.nan, "modulus": max(mods),
                         "gap": 0.0, "leak": mat.leak, "ambiguous": [str(c) for c in err.candidates]})
    return rows


# ---------------------------------------------------------------------------
# eigenvalue expansion


@dataclass
class LambdaExpansion:
    m: float
    sigma2: float
    h: float
    derivatives: dict
    remainder: list = field(default_factory=list)

    def to_dict(self):
        return {"m": self.m, "sigma2": self.sigma2, "h": self.h,
                "derivatives": self.derivatives, "remainder": self.remainder}


def _lambda(model, grid, t, nu_hat):
    return leading_eigen(build_operator(model, grid, t), nu_hat).value


def lambda_expansion(model: SystemModel, grid: OperatorGrid, t_grid=None, h: float | None = None,
                     sigma2_prior: float = 0.0, nu_hat=None, rtol: float = 0.05) -> LambdaExpansion:
    """``m = Im lambda'(0)`` and ``sigma^2 = -Re lambda''(0) - m^2`` by Richardson-combined
    central differences at ``h`` and ``h/2``.

    ``t_grid`` (symmetric, small) only feeds the remainder table
    ``|lambda(t) - (1 + i m t - sigma^2 t^2 / 2)| / |t|^3``.
    """
    if h is None:
        h = 0.05 / math.sqrt(sigma2_prior + 1.0)
    lam0 = _lambda(model, grid, 0.0, nu_hat)
    vals = {s: (_lambda(model, grid, s, nu_hat), _lambda(model, grid, -s, nu_hat)) for s in (h, h / 2)}
    d1 = {s: (p - m) / (2 * s) for s, (p, m) in vals.items()}
    d2 = {s: (p + m - 2 * lam0) / s**2 for s, (p, m) in vals.items()}
    r1 = (4 * d1[h / 2] - d1[h]) / 3
    r2 = (4 * d2[h / 2] - d2[h]) / 3
    scale2 = max(abs(r2), 1e-8)
    if abs(d2[h] - d2[h / 2]) > rtol * scale2 + 1e-9:
        raise NumericalError("Richardson pair for lambda'' disagrees; reduce h",
                             {"h": h, "d2(h)": complex(d2[h]).real, "d2(h/2)": complex(d2[h / 2]).real})
    m = float(r1.imag)
    sigma2 = float(-r2.real - m**2)
    if abs(sigma2) < 1e-12:
        sigma2 = 0.0
    rem = []
    for t in (t_grid if t_grid is not None else ()):
        if t == 0:
            continue
        lam = _lambda(model, grid, float(t), nu_hat)
        approx = 1 + 1j * m * t - (sigma2 + m**2) * t**2 / 2
        rem.append({"t": float(t), "ratio": float(abs(lam - approx) / abs(t) ** 3)})
    return LambdaExpansion(m, sigma2, h, {
        "lambda0": [lam0.real, lam0.imag],
        "d1": {str(s): [complex(v).real, complex(v).imag] for s, v in d1.items()},
        "d2": {str(s): [complex(v).real, complex(v).imag] for s, v in d2.items()},
    }, rem)


def sigma2_spectral(model, grid, **kw):
    from .variance import VarianceEstimate

    exp = lambda_expansion(model, grid, **kw)
    d2 = exp.derivatives["d2"]
    vals = [v[0] for v in d2.values()]
    return VarianceEstimate(exp.sigma2, "spectral", 0.0, abs(vals[0] - vals[1]), exp.sigma2,
                            {"m": exp.m, "h": exp.h, "grid": grid.to_dict()})


# ---------------------------------------------------------------------------
# Basic Lemma cross-check


@dataclass
class CharCheck:
    operator: complex
    monte_carlo: complex
    se: float
    allowance: float
    z: float

    def to_dict(self):
        return {"operator": [self.operator.real, self.operator.imag],
                "monte_carlo": [self.monte_carlo.real, self.monte_carlo.imag],
                "se": self.se, "allowance": self.allowance, "z": self.z}


def _operator_side(model, grid, points, weights, f, t, n):
    f = np.asarray(f, dtype=complex)
    if n == 0:
        return complex(weights @ grid.interpolate(f, points))
    mat = build_operator(model, grid, t).entries
    g = f
    for _ in range(n - 1):
        g = mat @ g
    # first step from the exact initial points, not their grid shadows
    rows, _ = _rows(model, grid, points, _fourier_weight(t))
    return complex(weights @ (rows @ g))


def char_function_check(model: SystemModel, grid: OperatorGrid, mu, f, t: float, n: int,
                        paths: int = 100_000, seed=0) -> CharCheck:
    """Compare ``E[f(R_n Z) exp(i t S_n)]`` (Monte Carlo) with ``mu(P(t)^n f)``.

    ``mu`` is a point, an ``(points, weights)`` pair or an
    :class:`EmpiricalMeasure`; ``f`` holds values on the grid nodes.  The
    interpolation allowance is the change of the operator value under one
    grid refinement.
    """
    _require_operator_model(model)
    if n < 0:
        raise ParameterError("n must be >= 0")
    f = np.asarray(f)
    if f.shape != (grid.size,):
        raise ParameterError(f"f must have one value per node ({grid.size})")
    if isinstance(mu, EmpiricalMeasure):
        points, weights = mu.points, mu.weights
    elif isinstance(mu, tuple):
        points, weights = np.asarray(mu[0], dtype=float).reshape(-1, model.dim), np.asarray(mu[1], dtype=float)
    else:
        points, weights = np.asarray(mu, dtype=float).reshape(1, model.dim), np.ones(1)
    weights = weights / weights.sum()
    op = _operator_side(model, grid, points, weights, f, t, n)
    fine = grid.refined()
    op_fine = _operator_side(model, fine, points, weights, grid.interpolate(f, fine.states()), t, n)
    allowance = abs(op_fine - op)

    rng = as_rng(seed)
    z = points[rng.choice(len(points), size=paths, p=weights)]
    s = np.zeros(paths)
    for _ in range(n):
        maps = model.draw(rng, paths)
        s += model.xi_values(maps, z)
        z = model.step(maps, z)
    vals = grid.interpolate(f, z) * (np.cos(t * s) + 1j * np.sin(t * s))
    mc = complex(vals.mean())
    se = math.sqrt((vals.real.var(ddof=1) + vals.imag.var(ddof=1)) / paths) if paths > 1 else math.inf
    denom = math.hypot(se, allowance)
    gap = abs(op - mc)
    zscore = 0.0 if gap == 0.0 else (gap / denom if denom > 0 else math.inf)
    return CharCheck(op, mc, se, allowance, zscore)


# ---------------------------------------------------------------------------
# peripheral spectrum and rationality


def rational_approximation(x: float, qmax: int = RATIONAL_QMAX, tol: float = RATIONAL_TOL,
                           significance: float = RATIONAL_SIGNIFICANCE):
    """Smallest-denominator convergent ``p/q`` (``q <= qmax``) of ``x`` with
    ``|x - p/q| < tol`` and ``q^2 |x - p/q| <= significance``, else ``None``.

    The second condition separates genuine rationals from the Dirichlet-level
    approximations every irrational has.
    """
    if not math.isfinite(x):
        return None
    for p, q in _convergents(x, qmax):
        err = abs(x - p / q)
        if err < tol and q * q * err <= significance:
            return p, q
    return None


def _convergents(x, qmax):
    """Continued-fraction convergents ``(p, q)`` of ``x`` with ``q <= qmax``."""
    p0, p1, q0, q1 = 0, 1, 1, 0
    y = x
    for _ in range(64):
        a = math.floor(y)
        p0, p1 = p1, a * p1 + p0
        q0, q1 = q1, a * q1 + q0
        if q1 > qmax:
            return
        yield p1, q1
        frac = y - a
        if frac < 1e-15:
            return
        y = 1.0 / frac


def rho_pair_test(rho1: float, rho2: float) -> dict:
    """Rationality heuristic for a pair of Perron radii.

    Checks ``ln(rho2 / rho1)`` and ``ln rho2 / ln rho1``; either being
    significantly rational marks the pair arithmetic-suspect.
    """
    out = {"rho": [rho1, rho2], "tests": {}}
    for label, x in (("log_ratio", math.log(rho2 / rho1)),
                     ("ratio_of_logs", math.log(rho2) / math.log(rho1) if rho1 != 1 else math.nan)):
        hit = rational_approximation(x)
        out["tests"][label] = {"x": x, "p_q": None if hit is None else list(hit)}
    out["arithmetic_suspect"] = any(v["p_q"] is not None for v in out["tests"].values())
    return out


@dataclass
class PeripheralReport:
    verdict: str
    max_modulus: float
    argmax_t: float
    table: list
    rho_pairs: list = field(default_factory=list)

    def to_dict(self):
        return dict(self.__dict__)


def peripheral_scan(model: SystemModel, grid: OperatorGrid, t_range=(0.5, 2 * math.pi),
                    points: int = 64, margin: float = 1e-3, extra_t=(math.pi,)) -> PeripheralReport:
    """Dominant modulus of ``P(t)`` on a grid of ``t`` values away from 0."""
    lo, hi = map(float, t_range)
    if hi <= lo or not (lo > 0 or hi < 0):
        raise ParameterError("t_range must be an interval excluding 0")
    ts = sorted(set(np.linspace(lo, hi, points).tolist()) | {t for t in extra_t if lo <= t <= hi})
    table = []
    for t in ts:
        mat = build_operator(model, grid, t)
        lam, _, _ = _power(mat.entries, np.ones(grid.size, dtype=complex), maxiter=300)
        if lam is None:
            top = np.abs(_top_moduli(mat.entries))
            row = {"t": t, "modulus": float(top[0])}
            if len(top) > 1 and top[0] - top[1] <= 1e-9 * max(top[0], 1e-300):
                row["ambiguous"] = True
            table.append(row)
        else:
            table.append({"t": t, "modulus": float(abs(lam))})
    mods = np.array([r["modulus"] for r in table])
    i = int(np.argmax(mods))
    verdict = "nonarithmetic-consistent" if mods[i] < 1.0 - margin else "arithmetic-suspect"
    pairs = []
    if isinstance(model.family, MatrixFamily):
        mats = model.pi.atoms["g"]
        radii = [perron_radius(g) for g in mats]
        for a in range(len(radii)):
            for b in range(a + 1, len(radii)):
                rep = rho_pair_test(radii[a], radii[b])
                pairs.append(rep)
                if rep["arithmetic_suspect"]:
                    verdict = "arithmetic-suspect"
    return PeripheralReport(verdict, float(mods[i]), float(ts[i]), table, pairs)
