"""Moment and contraction integrals of the map law, and the H(gamma0) check.

For finite-support laws every integral is an exact weighted sum (``se = 0``);
for the ``n``-fold convolution the ``k**n`` products are enumerated when
there are at most :data:`ENUM_CAP` of them.  Generative laws are sampled.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import SystemModel, as_rng
from .errors import HypothesisFailure, ParameterError
from .stats import CONFIDENCE, Estimate, checkpoint_means, mean_estimate

ENUM_CAP = 4096
SAMPLED_LIP_CAP = 2000
LAMBDA_GRID = [2.0**-k for k in range(21)]


def _one_step(model: SystemModel, nsamples: int, seed):
    """Lipschitz constants, displacements and weights of single maps."""
    if model.pi.is_finite:
        atoms = model.pi.atom_batch()
        return model.lip(atoms), model.disp(atoms), model.pi.weights
    n = nsamples if model.family.exact_lip else min(nsamples, SAMPLED_LIP_CAP)
    maps = model.draw(as_rng(seed), n)
    return model.lip(maps), model.disp(maps), None


def _sequences(model: SystemModel, n: int, nsamples: int, seed):
    """Composite maps ``R_n = Y_n ... Y_1``: returns (list of param dicts, weights or None)."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    pi = model.pi
    if pi.is_finite and pi.support_size**n <= ENUM_CAP:
        k = pi.support_size
        combos = np.array(list(itertools.product(range(k), repeat=n)), dtype=int).reshape(-1, n)
        weights = np.prod(pi.weights[combos], axis=1)
        atoms = pi.atoms
        seq = [{key: v[combos[:, j]] for key, v in atoms.items()} for j in range(n)]
        return seq, weights
    size = nsamples if model.family.exact_lip else min(nsamples, SAMPLED_LIP_CAP)
    rng = as_rng(seed)
    seq = [dict(model.draw(rng, size).params) for _ in range(n)]
    return seq, None


def _composite(model: SystemModel, seq):
    fam = model.family
    if len(seq) == 1:
        lip = np.asarray(fam.lip(seq[0]), dtype=float)
    else:
        lip = np.asarray(fam.composite_lip(seq), dtype=float)
    count = len(next(iter(seq[0].values())))
    x = np.tile(model.x0, (count, 1))
    for p in seq:
        x = fam.act(p, x)
    disp = np.asarray(fam.distance(x, np.broadcast_to(model.x0, x.shape)), dtype=float)
    return lip, disp


def _check_eta(eta):
    if eta < 1:
        raise ParameterError(f"eta={eta} must be >= 1")


def moment_M(model: SystemModel, eta: float, nsamples: int = 100_000, seed=0) -> Estimate:
    """``pi((1 + c + d(g x0, x0))^eta)``."""
    _check_eta(eta)
    lip, disp, w = _one_step(model, nsamples, seed)
    return mean_estimate((1.0 + lip + disp) ** eta, w)


def moment_Mprime(model: SystemModel, eta: float, nsamples: int = 100_000, seed=0) -> Estimate:
    """``pi(c (1 + c + d(g x0, x0))^(eta - 1))``."""
    _check_eta(eta)
    lip, disp, w = _one_step(model, nsamples, seed)
    return mean_estimate(lip * (1.0 + lip + disp) ** (eta - 1.0), w)


def contraction_C(model: SystemModel, eta: float, n: int, nsamples: int = 100_000, seed=0) -> Estimate:
    """``E[c(R_n) max(c(R_n), 1)^(eta - 1)]`` over the ``n``-fold convolution."""
    _check_eta(eta)
    seq, w = _sequences(model, n, nsamples, seed)
    lip, _ = _composite(model, seq)
    return mean_estimate(lip * np.maximum(lip, 1.0) ** (eta - 1.0), w)


def kappa0(model: SystemModel, n0max: int = 4, nsamples: int = 20_000, seed=0) -> float:
    """``C_1^(n0)^(1/n0)`` for the first ``n0`` with a certified contraction, else 1."""
    for n in range(1, n0max + 1):
        c = contraction_C(model, 1.0, n, nsamples, seed)
        if c.upper() < 1.0:
            return max(c.value, 0.0) ** (1.0 / n)
    return 1.0


# ---------------------------------------------------------------------------
# H(gamma0)


def finiteness_verdict(samples, weights=None, spread=0.10, cap=1000.0) -> tuple[str, dict]:
    """Heuristic surrogate for ``pi(f) < inf`` from samples of ``f``.

    Exact weighted sums over finite atoms are finite by construction.  For
    Monte Carlo samples the running mean at 10 logarithmic checkpoints must
    vary by less than ``spread`` (relative to the final mean), and the ratio
    of the largest of the top 0.1% of samples to the mean must be below
    ``cap``.
    """
    x = np.asarray(samples, dtype=float)
    if weights is not None:
        finite = bool(np.all(np.isfinite(x)))
        return ("holds" if finite else "fails"), {"exact": True}
    x = x[np.isfinite(x)]
    if len(x) < 100:
        return "inconclusive", {"reason": "too few finite samples"}
    cm = checkpoint_means(x)
    mean = float(x.mean())
    if mean <= 0:
        return "holds", {"checkpoint_spread": 0.0, "max_to_mean": 0.0}
    variation = float((cm.max() - cm.min()) / mean)
    top = np.sort(x)[-max(1, len(x) // 1000):]
    ratio = float(top.max() / mean)
    ok = variation < spread and ratio < cap
    return ("holds" if ok else "inconclusive"), {"checkpoint_spread": variation, "max_to_mean": ratio}


def theorem_thresholds(model: SystemModel, gamma0: float) -> dict:
    """Which limit theorems' ``gamma0`` thresholds the chosen value clears."""
    env = model.envelope
    if env is None:
        return {"note": "no RS envelope declared"}
    r, s = env.r, env.s
    need = {
        "A": r + max(r, s + 1),
        "B": 3 * r + max(r, s + 1),
        "C": r + max(r, s + 1),
        "S": 2 * r + s + 1,
    }
    return {k: {"threshold": v, "cleared": bool(gamma0 > v)} for k, v in need.items()}


@dataclass
class MomentReport:
    eta: dict
    M: Estimate
    Mprime: Estimate
    C: dict
    verdicts: dict
    H_verdict: str
    gamma0: float
    n0: int | None
    thresholds: dict = field(default_factory=dict)
    finiteness: dict = field(default_factory=dict)
    lambda0: float | None = None
    theta0: Estimate | None = None

    def to_dict(self) -> dict:
        return {
            "gamma0": self.gamma0,
            "eta": self.eta,
            "M": self.M.to_dict(),
            "Mprime": self.Mprime.to_dict(),
            "C": {str(n): e.to_dict() for n, e in self.C.items()},
            "verdicts": self.verdicts,
            "H_verdict": self.H_verdict,
            "n0": self.n0,
            "thresholds": self.thresholds,
            "finiteness": self.finiteness,
            "lambda0": self.lambda0,
            "theta0": None if self.theta0 is None else self.theta0.to_dict(),
        }


def check_H(model: SystemModel, gamma0: float, n0max: int = 3, nsamples: int = 100_000, seed=0,
            cap: float = 1000.0, k: float = CONFIDENCE) -> MomentReport:
    """Check ``M_{g+1} < inf``, ``M'_{2g+1} < inf`` and ``C^(n0)_{2g+1} < 1`` for some ``n0 <= n0max``."""
    if gamma0 <= 0:
        raise ParameterError("gamma0 must be > 0")
    eta_m, eta_p = gamma0 + 1.0, 2.0 * gamma0 + 1.0
    lip, disp, w = _one_step(model, nsamples, seed)
    dt = 1.0 + lip + disp
    m_samples = dt**eta_m
    p_samples = lip * dt ** (eta_p - 1.0)
    M = mean_estimate(m_samples, w)
    Mp = mean_estimate(p_samples, w)
    vm, fm = finiteness_verdict(m_samples, w, cap=cap)
    vp, fp = finiteness_verdict(p_samples, w, cap=cap)
    C = {}
    n0 = None
    for n in range(1, n0max + 1):
        C[n] = contraction_C(model, eta_p, n, nsamples, seed)
        if C[n].upper(k) < 1.0:
            n0 = n
            break
    if n0 is not None:
        vc = "holds"
    elif all(c.lower(k) >= 1.0 for c in C.values()):
        vc = "fails"
    else:
        vc = "inconclusive"
    verdicts = {"M_finite": vm, "Mprime_finite": vp, "contraction": vc}
    if "fails" in verdicts.values():
        overall = "fails"
    elif all(v == "holds" for v in verdicts.values()):
        overall = "holds"
    else:
        overall = "inconclusive"
    return MomentReport(
        eta={"M": eta_m, "Mprime": eta_p, "C": eta_p},
        M=M, Mprime=Mp, C=C, verdicts=verdicts, H_verdict=overall, gamma0=gamma0, n0=n0,
        thresholds=theorem_thresholds(model, gamma0),
        finiteness={"M": fm, "Mprime": fp},
    )


def theta0_estimate(model: SystemModel, gamma0: float, n0: int, lambda0: float, nsamples=100_000, seed=0):
    seq, w = _sequences(model, n0, nsamples, seed)
    lip, disp = _composite(model, seq)
    return mean_estimate(lip * (np.maximum(lip, 1.0) + lambda0 * disp) ** (2.0 * gamma0), w)


def find_lambda0(model: SystemModel, gamma0: float, n0: int, nsamples: int = 100_000, seed=0,
                 k: float = CONFIDENCE) -> tuple[float, Estimate]:
    """Largest ``lambda0`` in ``{1, 1/2, ..., 2^-20}`` whose ``theta0`` is certified below 1.

    ``theta0(lambda) = E[c (max(c, 1) + lambda d(R x0, x0))^(2 gamma0)]`` over
    ``R = R_{n0}``; it is increasing in ``lambda``, so the first admissible grid
    point from the top is the answer.
    """
    seq, w = _sequences(model, n0, nsamples, seed)
    lip, disp = _composite(model, seq)
    grid = {}
    for lam in LAMBDA_GRID:
        est = mean_estimate(lip * (np.maximum(lip, 1.0) + lam * disp) ** (2.0 * gamma0), w)
        grid[lam] = est
        if est.upper(k) < 1.0:
            return lam, est
    raise HypothesisFailure(
        "no admissible lambda0 on the geometric grid",
        {"grid": {str(lam): e.value for lam, e in grid.items()}},
    )
