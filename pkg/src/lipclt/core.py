"""Model abstraction: random Lipschitz maps, their laws and observables.

A chain ``Z_{n+1} = Y_{n+1} Z_n`` is described by three ingredients: a
*family* that knows how maps act on states and how far apart states are, a
distribution of maps, and an observable ``xi(g, x)``.  Everything is
vectorised over a leading batch axis: states are ``(n, dim)`` arrays and a
batch of ``n`` maps is a :class:`MapBatch` holding per-map parameter arrays.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DomainError, EvaluationError, ParameterError, SpecError

LIP_INFLATION = 1.05
LIP_PAIRS = 1000


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed, k: int) -> list[np.random.SeedSequence]:
    """Disjoint child seed streams; the same ``(seed, k)`` always gives the same children."""
    if isinstance(seed, np.random.SeedSequence):
        # rebuild so repeated calls do not advance the caller's spawn counter
        seed = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
        return seed.spawn(k)
    return np.random.SeedSequence(seed).spawn(k)


# ---------------------------------------------------------------------------
# maps


@dataclass(frozen=True)
class MapBatch:
    """``n`` drawn maps: per-map parameter arrays plus atom indices for finite laws."""

    params: Mapping[str, np.ndarray]
    index: np.ndarray | None = None

    def __len__(self):
        return len(next(iter(self.params.values())))

    def take(self, sel) -> "MapBatch":
        params = {k: v[sel] for k, v in self.params.items()}
        index = None if self.index is None else self.index[sel]
        return MapBatch(params, index)

    def repeat(self, reps: int) -> "MapBatch":
        params = {k: np.repeat(v, reps, axis=0) for k, v in self.params.items()}
        index = None if self.index is None else np.repeat(self.index, reps)
        return MapBatch(params, index)

    def tile(self, reps: int) -> "MapBatch":
        params = {k: np.tile(v, (reps,) + (1,) * (v.ndim - 1)) for k, v in self.params.items()}
        index = None if self.index is None else np.tile(self.index, reps)
        return MapBatch(params, index)


class Family:
    """How a class of maps acts on a metric state space.

    Subclasses implement :meth:`act`, :meth:`distance` and :meth:`lip`.
    ``compose`` is optional; without it composite Lipschitz constants are
    measured on sampled pairs.
    """

    name = "generic"
    dim = 1
    alpha = 1.0
    exact_lip = False

    def act(self, params, x):
        raise NotImplementedError

    def distance(self, x, y):
        raise NotImplementedError

    def lip(self, params):
        return self.sampled_lip(params)

    def check_states(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("state coordinates must be finite")
        return x

    def compose(self, outer, inner):
        """Parameters of ``outer o inner`` or ``None`` when not closed-form."""
        return None

    def sample_pairs(self, rng, k):
        """Random state pairs ``(x, y)`` used by sampled Lipschitz bounds."""
        x = rng.normal(scale=3.0, size=(k, self.dim))
        y = x + rng.normal(scale=rng.choice([1e-3, 1.0], size=(k, 1)), size=(k, self.dim))
        return x, y

    def _pairs(self):
        pairs = getattr(self, "_pair_cache", None)
        if pairs is None:
            pairs = self.sample_pairs(np.random.default_rng(20240601), LIP_PAIRS)
            object.__setattr__(self, "_pair_cache", pairs)
        return pairs

    def chain_ratio(self, param_seq):
        """Max of ``d(Rx, Ry) / d(x, y)`` over the fixed pair set, ``R`` = composition of ``param_seq``.

        Each element of ``param_seq`` holds arrays for ``n`` maps; the result has
        shape ``(n,)``.  Degenerate pairs (``x == y``) are skipped.
        """
        x0, y0 = self._pairs()
        n = len(next(iter(param_seq[0].values())))
        k = len(x0)
        block = 256
        if n > block:
            parts = [
                self.chain_ratio([{key: v[i:i + block] for key, v in p.items()} for p in param_seq])
                for i in range(0, n, block)
            ]
            return np.concatenate(parts)
        x = np.tile(x0, (n, 1))
        y = np.tile(y0, (n, 1))
        base = self.distance(x0, y0)
        keep = base > 0
        for p in param_seq:
            rep = {key: np.repeat(v, k, axis=0) for key, v in p.items()}
            x = self.act(rep, x)
            y = self.act(rep, y)
        num = self.distance(x, y).reshape(n, k)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(keep, num / np.where(keep, base, 1.0), 0.0)
        return ratio.max(axis=1)

    def sampled_lip(self, params):
        return LIP_INFLATION * self.chain_ratio([params])

    def composite_lip(self, param_seq):
        """Lipschitz bound of the composition ``g_n o ... o g_1`` for each batch entry."""
        p = param_seq[0]
        closed = True
        for q in param_seq[1:]:
            p = self.compose(q, p)
            if p is None:
                closed = False
                break
        if closed:
            return self.lip(p)
        bound = np.prod([self.lip(q) for q in param_seq], axis=0)
        return np.minimum(LIP_INFLATION * self.chain_ratio(param_seq), bound)

    def describe(self) -> dict:
        return {"family": self.name, "dim": self.dim, "alpha": self.alpha}


@dataclass(frozen=True)
class MapDistribution:
    """Law ``pi`` of the random maps: finite atoms with weights, or a seeded sampler."""

    atoms: Mapping[str, np.ndarray] | None = None
    weights: np.ndarray | None = None
    sampler: Callable[[np.random.Generator, int], Mapping[str, np.ndarray]] | None = None
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.atoms is None and self.sampler is None:
            raise SpecError("map distribution needs atoms or a sampler")
        if self.atoms is not None:
            w = np.asarray(self.weights, dtype=float)
            k = len(next(iter(self.atoms.values())))
            if w.shape != (k,):
                raise SpecError(f"expected {k} weights, got shape {w.shape}")
            if np.any(w <= 0):
                raise SpecError("atom weights must be positive")
            if abs(w.sum() - 1.0) > 1e-12:
                raise SpecError(f"atom weights sum to {w.sum()!r}, not 1")
            object.__setattr__(self, "weights", w)

    @property
    def is_finite(self) -> bool:
        return self.atoms is not None

    @property
    def support_size(self) -> int | None:
        return len(self.weights) if self.is_finite else None

    def atom_batch(self) -> MapBatch:
        return MapBatch(dict(self.atoms), np.arange(len(self.weights)))

    def draw(self, rng, size: int) -> MapBatch:
        rng = as_rng(rng)
        if self.is_finite:
            idx = rng.choice(len(self.weights), size=size, p=self.weights)
            return MapBatch({k: v[idx] for k, v in self.atoms.items()}, idx)
        return MapBatch(dict(self.sampler(rng, size)), None)


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class ObservableEnvelope:
    """Condition RS envelope: ``|xi| <= R(g)(1+d(x,x0))^r``, ``|xi(x)-xi(y)| <= S(g) d(x,y)(1+...)^s``."""

    r: float
    s: float
    R: Callable[[MapBatch], np.ndarray]
    S: Callable[[MapBatch], np.ndarray]

    def __post_init__(self):
        if self.r < 0 or self.s < 0:
            raise ParameterError("envelope exponents r, s must be nonnegative")


def constant_bound(value: float) -> Callable[[MapBatch], np.ndarray]:
    return lambda maps: np.full(len(maps), float(value))


class Observable:
    """Real function ``xi(g, x)`` of a map and a state, evaluated in batches."""

    name = "observable"
    depends_on_map = True

    def __call__(self, family, maps: MapBatch, x) -> np.ndarray:
        raise NotImplementedError

    def envelope(self, family) -> ObservableEnvelope | None:
        return None

    def describe(self) -> dict:
        return {"kind": self.name}


class StateFunction(Observable):
    """``xi(g, x) = chi(x)``; ``lip``/``growth`` describe the RS envelope of ``chi``."""

    depends_on_map = False

    def __init__(self, chi, name="state", r=1.0, s=0.0, bound=1.0, slope=1.0, params=None):
        self.chi = chi
        self.name = name
        self._env = (r, s, bound, slope)
        self.params = params or {}

    def __call__(self, family, maps, x):
        return np.asarray(self.chi(np.asarray(x, dtype=float)), dtype=float).reshape(len(x))

    def envelope(self, family):
        r, s, bound, slope = self._env
        return ObservableEnvelope(r, s, constant_bound(bound), constant_bound(slope))

    def describe(self):
        return {"kind": self.name, **self.params}


class Coboundary(Observable):
    """``xi(g, x) = chi(x) - chi(g x)``; sums telescope, so the limit variance is 0."""

    name = "coboundary"

    def __init__(self, chi, params=None):
        self.chi = chi
        self.params = params or {}

    def __call__(self, family, maps, x):
        x = np.asarray(x, dtype=float)
        gx = family.act(maps.params, x)
        return (np.asarray(self.chi(x), dtype=float) - np.asarray(self.chi(gx), dtype=float)).reshape(len(x))

    def describe(self):
        return {"kind": self.name, **self.params}


class ProductForm(Observable):
    """``xi(g, x) = u(g) chi(x)``; ``u`` is a per-atom value array or a function of the map batch."""

    name = "product"

    def __init__(self, u, chi=None, params=None):
        self.u = u
        self.chi = chi
        self.params = params or {}

    def u_values(self, maps: MapBatch) -> np.ndarray:
        if callable(self.u):
            return np.asarray(self.u(maps), dtype=float)
        if maps.index is None:
            raise SpecError("per-atom u(g) needs a finite-support map distribution")
        return np.asarray(self.u, dtype=float)[maps.index]

    def __call__(self, family, maps, x):
        u = self.u_values(maps)
        if self.chi is None:
            return u
        return u * np.asarray(self.chi(np.asarray(x, dtype=float)), dtype=float).reshape(len(x))

    def describe(self):
        return {"kind": self.name, **self.params}


class ZeroObservable(Observable):
    name = "zero"
    depends_on_map = False

    def __call__(self, family, maps, x):
        return np.zeros(len(x))

    def envelope(self, family):
        return ObservableEnvelope(0.0, 0.0, constant_bound(0.0), constant_bound(0.0))


class ConstantObservable(Observable):
    name = "constant"
    depends_on_map = False

    def __init__(self, value):
        self.value = float(value)

    def __call__(self, family, maps, x):
        return np.full(len(x), self.value)

    def envelope(self, family):
        return ObservableEnvelope(0.0, 0.0, constant_bound(abs(self.value)), constant_bound(0.0))

    def describe(self):
        return {"kind": self.name, "value": self.value}


# ---------------------------------------------------------------------------
# the model


@dataclass(frozen=True)
class SystemModel:
    """Family + map law + base point + observable, with the centering ``m`` frozen in.

    Atom-level Lipschitz constants and displacements are cached at
    construction for finite laws.
    """

    family: Family
    pi: MapDistribution
    x0: np.ndarray
    xi: Observable
    envelope: ObservableEnvelope | None = None
    m: float = 0.0
    name: str = "model"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.family.alpha <= 1.0):
            raise ParameterError(f"metric exponent alpha={self.family.alpha} not in (0, 1]")
        x0 = np.asarray(self.x0, dtype=float).reshape(self.family.dim)
        self.family.check_states(x0[None, :])
        object.__setattr__(self, "x0", x0)
        if self.envelope is None:
            object.__setattr__(self, "envelope", self.xi.envelope(self.family))
        if self.pi.is_finite and "_atom_lip" not in self.__dict__:
            atoms = self.pi.atom_batch()
            object.__setattr__(self, "_atom_lip", np.asarray(self.family.lip(atoms.params), dtype=float))
            object.__setattr__(self, "_atom_disp", self._disp_raw(atoms))

    # -- basic quantities ------------------------------------------------
    @property
    def dim(self) -> int:
        return self.family.dim

    def draw(self, rng, size: int) -> MapBatch:
        return self.pi.draw(rng, size)

    def step(self, maps: MapBatch, x) -> np.ndarray:
        return self.family.act(maps.params, x)

    def _disp_raw(self, maps):
        x0 = np.broadcast_to(self.x0, (len(maps), self.dim))
        return np.asarray(self.family.distance(self.family.act(maps.params, x0), x0), dtype=float)

    def lip(self, maps: MapBatch) -> np.ndarray:
        if maps.index is not None and self.pi.is_finite:
            return self._atom_lip[maps.index]
        return np.asarray(self.family.lip(maps.params), dtype=float)

    def disp(self, maps: MapBatch) -> np.ndarray:
        if maps.index is not None and self.pi.is_finite:
            return self._atom_disp[maps.index]
        return self._disp_raw(maps)

    def distance_to_x0(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.family.distance(x, np.broadcast_to(self.x0, x.shape))

    def raw_xi(self, maps: MapBatch, x) -> np.ndarray:
        vals = self.xi(self.family, maps, x)
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise EvaluationError(
                "observable returned a non-finite value", maps=maps.take([bad]), x=np.asarray(x)[bad]
            )
        return vals

    def xi_values(self, maps: MapBatch, x) -> np.ndarray:
        """Centered observable values ``xi(g, x) - m``."""
        return self.raw_xi(maps, x) - self.m

    def with_centering(self, m: float, source: str = "estimated") -> "SystemModel":
        meta = dict(self.meta, centering_source=source)
        return self._replace(m=float(m), meta=meta)

    def with_observable(self, xi: Observable, m: float = 0.0) -> "SystemModel":
        return self._replace(xi=xi, envelope=xi.envelope(self.family), m=m)

    def _replace(self, **changes):
        new = dataclasses.replace(self, **changes)
        return new

    def describe(self) -> dict:
        out = {
            "name": self.name,
            **self.family.describe(),
            "x0": [float(v) for v in self.x0],
            "observable": self.xi.describe(),
            "centering": self.m,
            "finite_support": self.pi.is_finite,
        }
        if self.pi.is_finite:
            out["support_size"] = self.pi.support_size
        out.update(self.pi.description)
        out.update({k: v for k, v in self.meta.items() if isinstance(v, (int, float, str, bool))})
        return out

    def fingerprint(self) -> str:
        return hashlib.sha256(repr(sorted(self.describe().items())).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# single-map operations


@dataclass(frozen=True)
class MapSample:
    """One drawn map ``g`` together with its Lipschitz bound ``c(g)`` and ``d(g x0, x0)``."""

    model: SystemModel
    maps: MapBatch
    lip: float
    disp: float

    @property
    def params(self):
        return {k: v[0] for k, v in self.maps.params.items()}


def map_sample(model: SystemModel, maps: MapBatch | None = None, *, rng=None, **params) -> MapSample:
    """Wrap one map of ``model`` as a :class:`MapSample`.

    Pass a one-element ``MapBatch``, raw parameters as keywords, or an ``rng``
    to draw one from ``model.pi``.
    """
    if maps is None:
        if params:
            maps = MapBatch({k: np.asarray(v, dtype=float)[None, ...] for k, v in params.items()})
        else:
            maps = model.draw(as_rng(rng), 1)
    if len(maps) != 1:
        raise ParameterError("map_sample expects exactly one map")
    return MapSample(model, maps, float(model.lip(maps)[0]), float(model.disp(maps)[0]))


def atom(model: SystemModel, i: int) -> MapSample:
    if not model.pi.is_finite:
        raise ParameterError("atom() needs a finite-support model")
    return map_sample(model, model.pi.atom_batch().take([i]))


def _as_row(model, x):
    x = np.asarray(x, dtype=float).reshape(1, model.dim)
    return model.family.check_states(x)


def apply(g: MapSample, x) -> np.ndarray:
    """``g(x)``; for matrix models the normalised image ``g(y)/||g(y)||``."""
    return g.model.step(g.maps, _as_row(g.model, x))[0]


def xi_eval(model: SystemModel, g: MapSample, x) -> float:
    """Centered observable ``xi(g, x) - m``."""
    return float(model.xi_values(g.maps, _as_row(model, x))[0])


def delta_tilde(g: MapSample) -> float:
    return 1.0 + g.lip + g.disp


def _check_lambda(lambda0):
    if not (0.0 < lambda0 <= 1.0):
        raise ParameterError(f"lambda0={lambda0} not in (0, 1]")


def p_lambda(model: SystemModel, x, lambda0: float) -> float:
    """Weight ``1 + lambda0 d(x, x0)``."""
    _check_lambda(lambda0)
    return float(1.0 + lambda0 * model.distance_to_x0(_as_row(model, x))[0])


def delta_lambda(g: MapSample, lambda0: float) -> float:
    """``max(c(g), 1) + lambda0 d(g x0, x0)``; bounds the ratio ``p(gx)/p(x)``."""
    _check_lambda(lambda0)
    return max(g.lip, 1.0) + lambda0 * g.disp


# ---------------------------------------------------------------------------
# property checks (sampled, used by tests and reports)


def lipschitz_violation(model: SystemModel, maps: MapBatch, pairs: int = 200, seed=0) -> float:
    """Largest ``d(gx, gy) / (c(g) d(x, y))`` over random pairs; <= 1 when bounds are valid."""
    rng = as_rng(seed)
    x, y = model.family.sample_pairs(rng, pairs)
    worst = 0.0
    lips = model.lip(maps)
    for i in range(len(maps)):
        g = maps.take(np.full(pairs, i))
        num = model.family.distance(model.step(g, x), model.step(g, y))
        den = model.family.distance(x, y)
        ok = den > 0
        if lips[i] == 0:
            worst = max(worst, 0.0 if np.all(num[ok] == 0) else math.inf)
            continue
        worst = max(worst, float(np.max(num[ok] / (lips[i] * den[ok]), initial=0.0)))
    return worst


def rs_violation(model: SystemModel, maps: MapBatch, x, y) -> float:
    """Largest ratio of ``|xi|`` or ``|xi(x)-xi(y)|`` to its RS bound over the given triples."""
    env = model.envelope
    if env is None:
        raise ParameterError("model has no RS envelope")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fx = model.xi_values(maps, x) + model.m
    fy = model.xi_values(maps, y) + model.m
    dx = model.distance_to_x0(x)
    dy = model.distance_to_x0(y)
    dxy = model.family.distance(x, y)
    bound1 = env.R(maps) * (1 + dx) ** env.r
    bound2 = env.S(maps) * dxy * (1 + dx + dy) ** env.s
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(bound1 > 0, np.abs(fx) / bound1, np.where(np.abs(fx) > 1e-12, np.inf, 0.0))
        diff = np.abs(fx - fy)
        r2 = np.where(bound2 > 0, diff / bound2, np.where(diff > 1e-9, np.inf, 0.0))
    return float(max(r1.max(initial=0.0), r2.max(initial=0.0)))
