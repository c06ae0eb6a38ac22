"""Concrete model families: affine autoregressions, functional autoregressions
and allowable nonnegative matrices acting on the simplex.

Also hosts the named presets used by the CLI and the test-suite.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    Coboundary,
    ConstantObservable,
    Family,
    MapDistribution,
    Observable,
    ObservableEnvelope,
    ProductForm,
    StateFunction,
    SystemModel,
    ZeroObservable,
    constant_bound,
)
from .errors import DomainError, NumericalError, ParameterError, SpecError

log = logging.getLogger(__name__)

SIMPLEX_FLOOR = 1e-14


# ---------------------------------------------------------------------------
# affine maps x -> a x + b on R^q


class AffineFamily(Family):
    """``g x = a(g) x + b(g)`` on ``R^q`` with ``d(x, y) = ||x - y||^alpha``.

    ``c(g) = ||a(g)||^alpha`` (operator 2-norm) is exact, as is composition.
    """

    name = "affine"
    exact_lip = True

    def __init__(self, dim=1, alpha=1.0):
        self.dim = int(dim)
        self.alpha = float(alpha)

    def act(self, params, x):
        a, b = params["a"], params["b"]
        if self.dim == 1:
            return a[:, 0, :] * x + b
        return np.einsum("nij,nj->ni", a, x) + b

    def distance(self, x, y):
        diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        if self.dim == 1:
            d = np.abs(diff[..., 0])
        else:
            d = np.linalg.norm(diff, axis=-1)
        return d if self.alpha == 1.0 else d**self.alpha

    def lip(self, params):
        a = params["a"]
        if self.dim == 1:
            c = np.abs(a[:, 0, 0])
        else:
            c = np.linalg.norm(a, ord=2, axis=(1, 2))
        return c if self.alpha == 1.0 else c**self.alpha

    def compose(self, outer, inner):
        a = np.matmul(outer["a"], inner["a"])
        b = np.einsum("nij,nj->ni", outer["a"], inner["b"]) + outer["b"]
        return {"a": a, "b": b}


def affine_params(a, b, dim):
    """Normalise scalar / matrix coefficients into ``(k, q, q)`` and ``(k, q)`` arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if dim == 1:
        a = a.reshape(-1, 1, 1)
        b = b.reshape(-1, 1)
    else:
        a = a.reshape(-1, dim, dim)
        b = b.reshape(-1, dim)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SpecError("affine coefficients must be finite")
    if len(a) != len(b):
        if len(a) == 1:
            a = np.repeat(a, len(b), axis=0)
        elif len(b) == 1:
            b = np.repeat(b, len(a), axis=0)
        else:
            raise SpecError("a and b atom counts differ")
    return {"a": a, "b": b}


@dataclass
class AffineSpec:
    """Law of ``(a(g), b(g))``: finite atoms (``a``, ``b``, ``weights``) or a ``sampler``.

    The sampler receives ``(rng, n)`` and returns ``(a, b)`` arrays.
    """

    dim: int = 1
    a: object = None
    b: object = None
    weights: object = None
    sampler: Callable | None = None
    alpha: float = 1.0
    description: dict = field(default_factory=dict)

    def validate(self):
        if self.dim < 1:
            raise SpecError("dimension q must be >= 1")
        if not (0.0 < self.alpha <= 1.0):
            raise SpecError(f"alpha={self.alpha} not in (0, 1]")
        if self.sampler is None and (self.a is None or self.b is None):
            raise SpecError("affine spec needs atoms (a, b) or a sampler")


def make_affine(spec: AffineSpec, xi: Observable, name="affine", m=0.0) -> SystemModel:
    spec.validate()
    fam = AffineFamily(spec.dim, spec.alpha)
    if spec.sampler is None:
        atoms = affine_params(spec.a, spec.b, spec.dim)
        k = len(atoms["a"])
        w = np.full(k, 1.0 / k) if spec.weights is None else np.asarray(spec.weights, dtype=float)
        pi = MapDistribution(atoms=atoms, weights=w, description=spec.description)
    else:
        dim, sampler = spec.dim, spec.sampler

        def draw(rng, n):
            a, b = sampler(rng, n)
            return affine_params(a, b, dim)

        pi = MapDistribution(sampler=draw, description=spec.description)
    return SystemModel(fam, pi, np.zeros(spec.dim), xi, m=m, name=name)


def gaussian_noise_sampler(a, scale=1.0, dim=1):
    """Fixed linear part ``a`` and ``b ~ N(0, scale^2 I)``."""
    a = np.asarray(a, dtype=float)

    def sampler(rng, n):
        b = rng.normal(scale=scale, size=(n, dim))
        return np.broadcast_to(a, (n,) + a.shape) if a.ndim else np.full(n, float(a)), b

    return sampler


def random_coefficient_sampler(a_low, a_high, scale=1.0):
    """Scalar ``a ~ U[a_low, a_high]``, ``b ~ N(0, scale^2)`` independently."""

    def sampler(rng, n):
        return rng.uniform(a_low, a_high, size=n), rng.normal(scale=scale, size=n)

    return sampler


# ---------------------------------------------------------------------------
# functional autoregression x -> f(x) + b


class FunctionalARFamily(Family):
    """``g x = f(x) + b_g`` with a fixed Lipschitz ``f`` of known constant."""

    name = "functional_ar"
    exact_lip = True

    def __init__(self, f, lip_f, dim=1, alpha=1.0):
        if not np.isfinite(lip_f) or lip_f < 0:
            raise SpecError("Lipschitz constant of f must be finite and nonnegative")
        self.f = f
        self.lip_f = float(lip_f)
        self.dim = int(dim)
        self.alpha = float(alpha)

    def act(self, params, x):
        return np.asarray(self.f(x), dtype=float) + params["b"]

    def distance(self, x, y):
        d = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
        return d if self.alpha == 1.0 else d**self.alpha

    def lip(self, params):
        return np.full(len(params["b"]), self.lip_f**self.alpha)


FUNCTIONAL_MAPS = {
    # name: (f(x, scale), Lipschitz constant as a function of scale)
    "tanh": (lambda x, c: c * np.tanh(x), lambda c: abs(c)),
    "sin": (lambda x, c: c * np.sin(x), lambda c: abs(c)),
    "linear": (lambda x, c: c * x, lambda c: abs(c)),
    "clip": (lambda x, c: c * np.clip(x, -1.0, 1.0), lambda c: abs(c)),
}


@dataclass
class FunctionalARSpec:
    f: Callable
    lip_f: float
    b: object = None
    weights: object = None
    sampler: Callable | None = None
    dim: int = 1
    alpha: float = 1.0
    description: dict = field(default_factory=dict)


def make_functional_ar(spec: FunctionalARSpec, xi: Observable, name="functional_ar", m=0.0) -> SystemModel:
    fam = FunctionalARFamily(spec.f, spec.lip_f, spec.dim, spec.alpha)
    if spec.sampler is None:
        if spec.b is None:
            raise SpecError("functional AR spec needs noise atoms b or a sampler")
        b = np.asarray(spec.b, dtype=float).reshape(-1, spec.dim)
        w = np.full(len(b), 1.0 / len(b)) if spec.weights is None else spec.weights
        pi = MapDistribution(atoms={"b": b}, weights=w, description=spec.description)
    else:
        dim, sampler = spec.dim, spec.sampler
        pi = MapDistribution(
            sampler=lambda rng, n: {"b": np.asarray(sampler(rng, n), dtype=float).reshape(n, dim)},
            description=spec.description,
        )
    return SystemModel(fam, pi, np.zeros(spec.dim), xi, m=m, name=name)


# ---------------------------------------------------------------------------
# nonnegative matrices on the simplex with the Hilbert metric


def hilbert_distance(y, y2) -> np.ndarray | float:
    """Hilbert projective distance ``-ln(m(y, y2) m(y2, y))`` on the open simplex.

    Accepts single points or ``(n, q)`` batches.
    """
    y = np.asarray(y, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if np.any(y <= 0) or np.any(y2 <= 0):
        raise DomainError("Hilbert distance to a boundary point is infinite")
    lr = np.log(y) - np.log(y2)
    d = lr.max(axis=-1) - lr.min(axis=-1)
    return float(d) if d.ndim == 0 else d


class MatrixFamily(Family):
    """Allowable nonnegative ``q x q`` matrices acting projectively on the simplex."""

    name = "matrix"

    def __init__(self, dim):
        if dim < 2:
            raise SpecError("matrix models need q >= 2")
        self.dim = int(dim)
        self.alpha = 1.0

    def check_states(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("state coordinates must be finite")
        if np.any(x <= 0):
            raise DomainError("simplex points need strictly positive coordinates")
        if np.any(np.abs(x.sum(axis=-1) - 1.0) > 1e-12):
            raise DomainError("simplex coordinates must sum to 1")
        return x

    def image(self, params, y):
        return np.einsum("nij,nj->ni", params["g"], y)

    def act(self, params, y):
        w = self.image(params, y)
        w = w / w.sum(axis=-1, keepdims=True)
        low = w < SIMPLEX_FLOOR
        if np.any(low):
            log.warning("clamped %d simplex coordinates below %g", int(low.sum()), SIMPLEX_FLOOR)
            w = np.maximum(w, SIMPLEX_FLOOR)
            w = w / w.sum(axis=-1, keepdims=True)
        return w

    def distance(self, x, y):
        return hilbert_distance(x, y)

    def lip(self, params):
        return np.minimum(1.0, self.sampled_lip(params))

    def composite_lip(self, param_seq):
        return np.minimum(1.0, super().composite_lip(param_seq))

    def compose(self, outer, inner):
        return {"g": np.matmul(outer["g"], inner["g"])}

    def sample_pairs(self, rng, k):
        q = self.dim
        conc = rng.choice([0.3, 1.0, 5.0], size=(k, 1))
        x = rng.gamma(np.broadcast_to(conc, (k, q)))
        x = np.maximum(x, 1e-6)
        x /= x.sum(axis=1, keepdims=True)
        near = rng.random(k) < 0.3
        y = rng.gamma(np.broadcast_to(conc, (k, q)))
        y = np.maximum(y, 1e-6)
        y /= y.sum(axis=1, keepdims=True)
        jitter = x * np.exp(rng.normal(scale=1e-3, size=(k, q)))
        y[near] = (jitter / jitter.sum(axis=1, keepdims=True))[near]
        return x, y


class Cocycle(Observable):
    """``a(g, y) = ln ||g(y)||_1``; with centering ``m = gamma_1`` this is ``a - gamma_1``."""

    name = "cocycle"

    def __call__(self, family, maps, y):
        w = family.image(maps.params, np.asarray(y, dtype=float))
        norm = np.abs(w).sum(axis=-1)
        if np.any(norm <= 0):
            raise NumericalError("zero image norm: degenerate matrix")
        return np.log(norm)

    def envelope(self, family):
        def R(maps):
            col = maps.params["g"].sum(axis=1)
            return 2.0 * (np.abs(np.log(col.max(axis=1))) + np.abs(np.log(col.min(axis=1))))

        return ObservableEnvelope(0.0, 0.0, R, constant_bound(1.0))


def cocycle(g, y) -> float:
    """``ln ||g(y)||_1`` for one matrix and one simplex point."""
    g = np.asarray(g, dtype=float)
    y = np.asarray(y, dtype=float)
    norm = np.abs(g @ y).sum()
    if norm <= 0:
        raise NumericalError("zero image norm: degenerate matrix")
    return float(math.log(norm))


def check_allowable(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise SpecError(f"expected a square matrix, got shape {g.shape}")
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise SpecError("matrix entries must be finite and nonnegative")
    if not (np.all((g > 0).any(axis=1)) and np.all((g > 0).any(axis=0))):
        raise SpecError("matrix is not allowable: a row or column has no positive entry")
    return g


def perron_radius(g, tol=1e-12, max_iter=100_000) -> float:
    """Dominant eigenvalue of a nonnegative allowable matrix by power iteration.

    The iterate is kept on the simplex; convergence is declared when the
    growth factor ``||g v||_1`` changes by less than ``tol`` relatively over
    one step.
    """
    g = check_allowable(g)
    v = np.full(len(g), 1.0 / len(g))
    est = prev_step = None
    for _ in range(max_iter):
        w = g @ v
        new = w.sum()
        v = w / new
        if est is not None:
            step = abs(new - est)
            if step == 0.0:
                return float(new)
            # geometric tail of the remaining error, from the observed step ratio
            ratio = step / prev_step if prev_step else 0.0
            if ratio < 1.0 and step * ratio / (1.0 - ratio) <= tol * new and step <= tol * new:
                return float(new)
            prev_step = step
        est = new
    raise NumericalError(
        f"power iteration did not converge in {max_iter} steps",
        {"residual": float(np.abs(g @ v - est * v).sum())},
    )


@dataclass
class PositiveMatrixSpec:
    """Allowable matrices as finite atoms (``matrices`` + ``weights``) or a ``sampler``."""

    dim: int
    matrices: object = None
    weights: object = None
    sampler: Callable | None = None
    description: dict = field(default_factory=dict)

    def atoms(self) -> np.ndarray:
        mats = np.asarray(self.matrices, dtype=float).reshape(-1, self.dim, self.dim)
        for g in mats:
            check_allowable(g)
        return mats

    @property
    def strictly_positive(self) -> list[bool]:
        return [bool(np.all(g > 0)) for g in self.atoms()]


def positive_product_length(mats, cap=8) -> int | None:
    """Smallest ``n <= cap`` such that some product of ``n`` atoms is strictly positive.

    Works on zero patterns only, so it is exact for finite supports.
    """
    patterns = {tuple(map(tuple, (np.asarray(g) > 0).astype(int))) for g in mats}
    base = [np.array(p, dtype=bool) for p in patterns]
    current = {p: np.array(p, dtype=bool) for p in patterns}
    for n in range(1, cap + 1):
        if any(c.all() for c in current.values()):
            return n
        nxt = {}
        for c, b in itertools.product(current.values(), base):
            prod = (b.astype(int) @ c.astype(int)) > 0
            nxt[tuple(map(tuple, prod.astype(int)))] = prod
        current = nxt
    return None


def make_matrix_model(spec: PositiveMatrixSpec, gamma1_hint=None, n0_cap=8, name="matrix",
                      drift_steps=20_000, seed=0) -> SystemModel:
    """Matrix-product model with observable ``a(g, y) - gamma_1``.

    ``gamma1_hint`` may be a number (used as is) or ``None`` (estimated as the
    long-run cocycle mean by :func:`lipclt.simulate.estimate_drift`).
    """
    fam = MatrixFamily(spec.dim)
    meta = {}
    if spec.sampler is None:
        mats = spec.atoms()
        k = len(mats)
        w = np.full(k, 1.0 / k) if spec.weights is None else np.asarray(spec.weights, dtype=float)
        pi = MapDistribution(atoms={"g": mats}, weights=w, description=spec.description)
        n0 = positive_product_length(mats, cap=n0_cap)
        meta["positive_product_n0"] = n0 if n0 is not None else "unverified"
    else:
        dim, sampler = spec.dim, spec.sampler

        def draw(rng, n):
            g = np.asarray(sampler(rng, n), dtype=float).reshape(n, dim, dim)
            if np.any(g < 0):
                raise SpecError("sampler produced a negative entry")
            return {"g": g}

        pi = MapDistribution(sampler=draw, description=spec.description)
        meta["positive_product_n0"] = "unverified"
    model = SystemModel(fam, pi, np.full(spec.dim, 1.0 / spec.dim), Cocycle(), m=0.0, name=name, meta=meta)
    if gamma1_hint is not None:
        return model.with_centering(float(gamma1_hint), source="hint")
    from .simulate import estimate_drift

    est = estimate_drift(model, n=drift_steps, paths=16, seed=seed)
    return model.with_centering(est.value, source="estimated")


def lognormal_matrix_sampler(dim, sigma=0.5, mean=0.0):
    """Matrices with i.i.d. log-normal entries (strictly positive)."""

    def sampler(rng, n):
        return np.exp(rng.normal(mean, sigma, size=(n, dim, dim)))

    return sampler


# ---------------------------------------------------------------------------
# observables on vector states


def coordinate(i=0, shift=0.0):
    return lambda x: x[:, i] - shift


def identity_observable(shift=0.0) -> StateFunction:
    """``chi(x) = x_1 - shift``; RS with ``r = 1``, ``s = 0``."""
    return StateFunction(coordinate(0, shift), name="identity", r=1.0, s=0.0,
                         bound=max(1.0, abs(shift)), slope=1.0, params={"shift": shift})


def coboundary_observable(shift=0.0) -> Coboundary:
    return Coboundary(coordinate(0, shift), params={"chi": "identity", "shift": shift})


def product_observable(u, chi_shift=None) -> ProductForm:
    """``u(g) chi(x)`` with per-atom ``u``; ``chi_shift=None`` means ``chi = 1``."""
    chi = None if chi_shift is None else coordinate(0, chi_shift)
    params = {"u": [float(v) for v in u]}
    if chi_shift is not None:
        params["chi_shift"] = chi_shift
    return ProductForm(np.asarray(u, dtype=float), chi, params=params)


# ---------------------------------------------------------------------------
# presets


def doubling_ifs(observable="centered") -> SystemModel:
    """``x/2`` and ``(x+1)/2`` with equal weights; Uniform[0, 1] is invariant."""
    xi = {
        "centered": identity_observable(0.5),
        "lattice": product_observable([-1.0, 1.0]),
        "zero": ZeroObservable(),
    }[observable]
    spec = AffineSpec(dim=1, a=[0.5, 0.5], b=[0.0, 0.5], weights=[0.5, 0.5],
                      description={"preset": "doubling_ifs"})
    return make_affine(spec, xi, name=f"doubling_ifs/{observable}")


def halving_map(xi=None) -> SystemModel:
    """Deterministic ``x -> x/2``."""
    spec = AffineSpec(dim=1, a=[0.5], b=[0.0], weights=[1.0], description={"preset": "halving"})
    return make_affine(spec, xi or identity_observable(), name="halving")


def identity_affine(xi=None) -> SystemModel:
    spec = AffineSpec(dim=1, a=[1.0], b=[0.0], weights=[1.0], description={"preset": "identity"})
    return make_affine(spec, xi or identity_observable(), name="identity")


def ar1(a=0.5, noise="gaussian", scale=1.0, observable="identity") -> SystemModel:
    """Scalar AR(1) ``Z' = a Z + b``.

    ``noise`` is ``"gaussian"`` (``b ~ N(0, scale^2)``) or ``"pm1"``
    (``b = +-scale`` with equal weights).  ``observable`` is ``identity``,
    ``coboundary`` or ``product`` (``u = +-1`` per atom times ``x``).
    """
    if noise == "gaussian":
        spec = AffineSpec(dim=1, sampler=gaussian_noise_sampler(a, scale),
                          description={"preset": "ar1", "a": a, "noise": noise, "scale": scale})
    elif noise == "pm1":
        spec = AffineSpec(dim=1, a=[a, a], b=[-scale, scale], weights=[0.5, 0.5],
                          description={"preset": "ar1", "a": a, "noise": noise, "scale": scale})
    else:
        raise ParameterError(f"unknown AR(1) noise {noise!r}")
    if observable == "identity":
        xi = identity_observable()
    elif observable == "coboundary":
        xi = coboundary_observable()
    elif observable == "product":
        if noise != "pm1":
            raise ParameterError("product observable needs the finite pm1 noise")
        xi = product_observable([-1.0, 1.0], chi_shift=0.0)
    else:
        raise ParameterError(f"unknown AR(1) observable {observable!r}")
    return make_affine(spec, xi, name=f"ar1/{noise}/{observable}")


def iid_pm1() -> SystemModel:
    """Constant maps to 0 and observable ``u(g) = +-1``: an i.i.d. +-1 walk."""
    spec = AffineSpec(dim=1, a=[0.0, 0.0], b=[0.0, 0.0], weights=[0.5, 0.5],
                      description={"preset": "iid_pm1"})
    return make_affine(spec, product_observable([-1.0, 1.0]), name="iid_pm1")


def single_matrix(g=((2.0, 1.0), (1.0, 2.0)), gamma1_hint=None) -> SystemModel:
    g = np.asarray(g, dtype=float)
    spec = PositiveMatrixSpec(dim=len(g), matrices=[g], weights=[1.0],
                              description={"preset": "single_matrix"})
    return make_matrix_model(spec, gamma1_hint=gamma1_hint, name="single_matrix")


def identity_matrix(dim=2) -> SystemModel:
    spec = PositiveMatrixSpec(dim=dim, matrices=[np.eye(dim)], weights=[1.0],
                              description={"preset": "identity_matrix"})
    return make_matrix_model(spec, gamma1_hint=None, name="identity_matrix")


def constant_observable_model(value=1.0) -> SystemModel:
    return doubling_ifs("centered").with_observable(ConstantObservable(value))


PRESETS = {
    "doubling_ifs": doubling_ifs,
    "halving": halving_map,
    "identity": identity_affine,
    "ar1": ar1,
    "iid_pm1": iid_pm1,
    "single_matrix": single_matrix,
    "identity_matrix": identity_matrix,
}
