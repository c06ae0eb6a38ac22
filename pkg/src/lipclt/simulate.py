"""Trajectories, partial sums, empirical invariant measures and ergodicity rates."""

from __future__ import annotations

import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import MapBatch, SystemModel, as_rng, spawn_seeds
from .errors import EvaluationError, ParameterError
from .stats import Estimate, batch_means, projected_wasserstein1

CHUNK = 4096
DEFAULT_THREADS = int(os.environ.get("LIPCLT_THREADS", "1"))


@dataclass(frozen=True)
class PathSample:
    """One trajectory ``Z_0..Z_n`` with partial sums ``S_0 = 0, ..., S_n``."""

    states: np.ndarray
    sums: np.ndarray
    seed: int
    maps: MapBatch
    cocycle_total: float | None = None

    @property
    def n(self) -> int:
        return len(self.sums) - 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        dim = self.states.shape[1]
        buf.write("step," + ",".join(f"z{i}" for i in range(dim)) + ",sum\n")
        for k in range(len(self.sums)):
            coords = ",".join(repr(float(v)) for v in self.states[k])
            buf.write(f"{k},{coords},{float(self.sums[k])!r}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point set approximating the invariant law."""

    points: np.ndarray
    weights: np.ndarray
    n_used: int
    origin: str
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.points) == 0:
            raise ParameterError("empty empirical measure")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ParameterError("empirical weights must be positive and sum to 1")

    @classmethod
    def uniform(cls, points, origin, **extra):
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        n = len(points)
        if n == 0:
            raise ParameterError("empty empirical measure")
        return cls(points, np.full(n, 1.0 / n), n, origin, extra)

    @classmethod
    def point_mass(cls, x):
        return cls(np.asarray(x, dtype=float).reshape(1, -1), np.ones(1), 1, "point")

    def expect(self, f) -> float:
        return float(np.dot(self.weights, np.asarray(f(self.points), dtype=float)))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def var(self) -> np.ndarray:
        mu = self.mean()
        return self.weights @ (self.points - mu) ** 2

    def sample(self, rng, size) -> np.ndarray:
        idx = as_rng(rng).choice(len(self.points), size=size, p=self.weights)
        return self.points[idx]

    def subsample(self, size, seed=0) -> "EmpiricalMeasure":
        if size >= len(self.points):
            return self
        pts = self.sample(seed, size)
        return EmpiricalMeasure.uniform(pts, self.origin)

    def quantiles(self, qs) -> np.ndarray:
        """Weighted quantiles per coordinate, shape ``(len(qs), dim)``."""
        out = []
        for j in range(self.points.shape[1]):
            order = np.argsort(self.points[:, j])
            cw = np.cumsum(self.weights[order])
            out.append(self.points[order, j][np.minimum(np.searchsorted(cw, qs), len(cw) - 1)])
        return np.array(out).T

    def to_json(self) -> str:
        return json.dumps({
            "origin": self.origin,
            "n_used": self.n_used,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.asarray(d["points"], dtype=float), np.asarray(d["weights"], dtype=float),
                   d["n_used"], d["origin"])


# ---------------------------------------------------------------------------
# initial laws


def draw_initial(model: SystemModel, init, rng, size) -> np.ndarray:
    """States drawn from ``init``: ``None`` (point mass at x0), a point, an
    :class:`EmpiricalMeasure`, or a callable ``(rng, size) -> states``.
    """
    if init is None:
        return np.tile(model.x0, (size, 1))
    if isinstance(init, EmpiricalMeasure):
        return init.sample(rng, size)
    if callable(init):
        return np.asarray(init(rng, size), dtype=float).reshape(size, model.dim)
    x = np.asarray(init, dtype=float).reshape(1, model.dim)
    model.family.check_states(x)
    return np.tile(x, (size, 1))


# ---------------------------------------------------------------------------
# trajectories


def run_chain(model: SystemModel, z0, n: int, seed: int = 0) -> PathSample:
    """Single trajectory of length ``n``; deterministic in ``(model, z0, n, seed)``."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    rng = as_rng(seed)
    z = draw_initial(model, z0, rng, 1)
    maps = model.draw(rng, n)
    states = np.empty((n + 1, model.dim))
    sums = np.zeros(n + 1)
    states[0] = z[0]
    cocycle = 0.0
    for k in range(n):
        g = maps.take([k])
        try:
            raw = model.raw_xi(g, z)[0]
        except EvaluationError as exc:
            raise EvaluationError(str(exc), maps=g, x=z[0], step=k + 1) from exc
        cocycle += raw
        sums[k + 1] = sums[k] + (raw - model.m)
        z = model.step(g, z)
        states[k + 1] = z[0]
    total = cocycle if model.family.name == "matrix" else None
    return PathSample(states, sums, seed if isinstance(seed, int) else -1, maps, total)


def _run_block(model, init, n_grid, size, seq, record_every, record_states):
    rng = np.random.default_rng(seq)
    z = draw_initial(model, init, rng, size)
    z_init = z.copy()
    s = np.zeros(size)
    out = np.empty((size, len(n_grid)))
    trace = [] if record_every else None
    states = [] if record_states else None
    j = 0
    n_max = n_grid[-1]
    for k in range(1, n_max + 1):
        maps = model.draw(rng, size)
        s += model.xi_values(maps, z)
        z = model.step(maps, z)
        if record_every and k % record_every == 0:
            trace.append(z.copy())
        while j < len(n_grid) and n_grid[j] == k:
            out[:, j] = s
            if record_states:
                states.append(z.copy())
            j += 1
    return out, z, z_init, trace, states


def simulate_sums(model: SystemModel, init, n_grid, paths: int, seed=0, threads=None,
                  record_every=0, record_states=False):
    """Partial sums ``S_n`` at every ``n`` of ``n_grid`` for ``paths`` independent paths.

    Paths are split into fixed blocks of :data:`CHUNK`, each with its own
    child seed, so results do not depend on ``threads``.

    Returns ``(sums (paths, len(n_grid)), final_states, initial_states, trace, grid_states)``.
    """
    n_grid = sorted(int(n) for n in np.atleast_1d(n_grid))
    if paths < 1:
        raise ParameterError("paths must be >= 1")
    if n_grid[0] < 1:
        raise ParameterError("n must be >= 1")
    sizes = [min(CHUNK, paths - i) for i in range(0, paths, CHUNK)]
    seqs = spawn_seeds(seed, len(sizes))
    threads = threads or DEFAULT_THREADS
    jobs = [(model, init, n_grid, sz, sq, record_every, record_states) for sz, sq in zip(sizes, seqs)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda a: _run_block(*a), jobs))
    else:
        parts = [_run_block(*a) for a in jobs]
    sums = np.concatenate([p[0] for p in parts])
    final = np.concatenate([p[1] for p in parts])
    initial = np.concatenate([p[2] for p in parts])
    trace = None
    if record_every:
        trace = np.concatenate([np.stack(p[3], axis=1) for p in parts])
    grid_states = None
    if record_states:
        grid_states = np.concatenate([np.stack(p[4], axis=1) for p in parts])
    return sums, final, initial, trace, grid_states


def sample_terminal(model: SystemModel, init, n: int, paths: int, seed=0, threads=None):
    """``paths`` i.i.d. terminal pairs ``(Z_n, S_n)``."""
    sums, final, *_ = simulate_sums(model, init, [n], paths, seed, threads)
    return final, sums[:, 0]


def cesaro_measure(model: SystemModel, n: int, seed=0, reps: int = 64, init=None) -> EmpiricalMeasure:
    """Pooled occupation measure ``(1/n) sum_{k<n} delta_{Z_k}`` of ``reps`` chains from x0."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    rng = as_rng(seed)
    z = draw_initial(model, init, rng, reps)
    pts = np.empty((n, reps, model.dim))
    for k in range(n):
        pts[k] = z
        z = model.step(model.draw(rng, reps), z)
    return EmpiricalMeasure.uniform(pts.reshape(n * reps, model.dim), "cesaro", reps=reps, n=n)


def longrun_measure(model: SystemModel, size: int, burn_in: int | None = None, seed=0,
                    init=None) -> EmpiricalMeasure:
    """Endpoints of ``size`` independent chains run for ``burn_in`` steps from ``init``."""
    if burn_in is None:
        burn_in = default_burn_in(model, seed)
    rng = as_rng(seed)
    z = draw_initial(model, init, rng, size)
    for _ in range(burn_in):
        z = model.step(model.draw(rng, size), z)
    return EmpiricalMeasure.uniform(z, "longrun", burn_in=burn_in)


def default_burn_in(model: SystemModel, seed=0, fallback=1000) -> int:
    """``ceil(10 / -ln kappa0)`` with ``kappa0`` from the contraction diagnostics."""
    from .diagnostics import kappa0

    k = kappa0(model, seed=seed)
    if not (0.0 < k < 1.0):
        return fallback if k >= 1.0 else 1
    return int(min(fallback, math.ceil(10.0 / -math.log(k))))


# ---------------------------------------------------------------------------
# ergodicity and drift


@dataclass(frozen=True)
class DecayReport:
    steps: list
    w1: list
    noise_floor: float
    slope: float
    reference_slope: float | None
    fitted_steps: list

    def to_dict(self):
        return {
            "steps": self.steps,
            "w1": self.w1,
            "noise_floor": self.noise_floor,
            "slope": self.slope,
            "reference_slope": self.reference_slope,
            "fitted_steps": self.fitted_steps,
        }


def ergodicity_decay(model: SystemModel, mu0, nu_hat: EmpiricalMeasure, horizon: int, paths: int,
                     seed=0, floor_factor=5.0, kappa=None) -> DecayReport:
    """Empirical W1 between the time-``n`` marginal from ``mu0`` and ``nu_hat``.

    The decay slope is fitted on ``log W1_n`` over the steps where ``W1_n``
    exceeds ``floor_factor`` times the self-distance noise floor.  The
    reference slope is ``0.5 ln kappa0``.
    """
    if nu_hat is None or len(nu_hat.points) == 0:
        raise ParameterError("empty reference measure")
    rng = as_rng(seed)
    ref = nu_hat.sample(rng, max(paths, 1))
    if len(nu_hat.points) == 1:
        floor = 0.0
    else:
        floor = projected_wasserstein1(nu_hat.sample(rng, paths), nu_hat.sample(rng, paths), seed=1)
    z = draw_initial(model, mu0, rng, paths)
    steps, w1 = [], []
    for n in range(horizon + 1):
        steps.append(n)
        w1.append(projected_wasserstein1(z, ref, seed=1))
        if n < horizon:
            z = model.step(model.draw(rng, paths), z)
    w = np.asarray(w1)
    keep = w > max(floor_factor * floor, 1e-300)
    fitted = [s for s, k in zip(steps, keep) if k]
    slope = math.nan
    if keep.sum() >= 2:
        slope = float(np.polyfit(np.asarray(steps)[keep], np.log(w[keep]), 1)[0])
    if kappa is None:
        from .diagnostics import kappa0

        kappa = kappa0(model, seed=seed)
    ref_slope = 0.5 * math.log(kappa) if 0 < kappa else None
    return DecayReport(steps, [float(v) for v in w1], float(floor), slope, ref_slope, fitted)


def estimate_drift(model: SystemModel, n: int = 4096, paths: int = 64, seed=0, burn_in: int | None = None,
                   init=None) -> Estimate:
    """Long-run mean of the *uncentered* increments ``xi(Y_k, Z_{k-1})``.

    For matrix models this is the top Lyapunov exponent.  The standard error
    uses batch means within each chain.
    """
    rng = as_rng(seed)
    if burn_in is None:
        burn_in = 200 if model.family.name == "matrix" else default_burn_in(model, seed)
    z = draw_initial(model, init, rng, paths)
    for _ in range(burn_in):
        z = model.step(model.draw(rng, paths), z)
    series = np.empty((paths, n))
    for k in range(n):
        maps = model.draw(rng, paths)
        series[:, k] = model.raw_xi(maps, z)
        z = model.step(maps, z)
    return batch_means(series)
