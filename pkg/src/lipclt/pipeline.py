"""Run the diagnose -> simulate -> variance -> spectral -> clt pipeline and write reports.

Every report is a pure function of the normalised config and the master
seed: no timestamps, sorted keys, stage seeds spawned at fixed indices.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import diagnostics, harness, simulate, spectral, variance
from .config import Experiment, experiment
from .core import spawn_seeds
from .errors import HypothesisFailure, LipCLTError, NumericalError, UnsupportedModelError

log = logging.getLogger(__name__)

STAGE_INDEX = {"diagnose": 0, "simulate": 1, "variance": 2, "spectral": 3, "clt": 4, "local": 5, "nu": 6}


def jsonable(obj):
    """Plain-JSON view of reports: NaN becomes null, infinities become strings."""
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, complex):
        return [jsonable(obj.real), jsonable(obj.imag)]
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    fields = list(rows[0])
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in r.items()})
    return buf.getvalue()


def default_gamma0(model) -> float:
    """Half a unit above the threshold of the annealed CLT for the model's RS exponents."""
    env = model.envelope
    if env is None:
        return 1.0
    return env.r + max(env.r, env.s + 1.0) + 0.5


class Run:
    """Mutable state shared between stages of one pipeline run."""

    def __init__(self, exp: Experiment, out_dir, threads=None):
        self.exp = exp
        self.model = exp.model
        self.cfg = exp.config
        self.out = Path(out_dir) if out_dir is not None else None
        self.threads = threads
        self.seeds = spawn_seeds(exp.seed, len(STAGE_INDEX))
        self.reports: dict = {}
        self.files: list = []
        self.failures: list = []
        self._nu = None

    def seed(self, stage):
        return self.seeds[STAGE_INDEX[stage]]

    def nu_hat(self):
        if self._nu is None:
            size = min(self.cfg["simulation"]["paths"], 32_768)
            self._nu = simulate.longrun_measure(self.model, max(size, 1024), seed=self.seed("nu"))
        return self._nu

    def init(self):
        init = self.cfg["simulation"]["init"]
        if init == "stationary":
            return self.nu_hat()
        return init

    def header(self, stage):
        return {"stage": stage, "config_hash": self.exp.hash, "seed": self.exp.seed,
                "model": self.model.describe()}

    def write(self, name, text):
        if self.out is None:
            return
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / name, "w", newline="") as fh:
            fh.write(text)
        self.files.append(name)

    def emit(self, stage, body, rows=None):
        report = {**self.header(stage), **body}
        self.reports[stage] = jsonable(report)
        self.write(f"{stage}.json", dumps(report))
        if rows:
            self.write(f"{stage}.csv", to_csv(rows))
        return report


# ---------------------------------------------------------------------------
# stages


def stage_diagnose(run: Run):
    d = run.cfg["diagnostics"]
    gamma0 = d["gamma0"] if d["gamma0"] is not None else default_gamma0(run.model)
    seed = run.seed("diagnose")
    rep = diagnostics.check_H(run.model, gamma0, n0max=d["n0max"], nsamples=d["nsamples"], seed=seed)
    if rep.n0 is not None:
        try:
            rep.lambda0, rep.theta0 = diagnostics.find_lambda0(run.model, gamma0, rep.n0, d["nsamples"], seed)
        except HypothesisFailure as err:
            rep.finiteness["lambda0"] = {"error": str(err), **err.details}
    body = {"report": rep, "kappa0": diagnostics.kappa0(run.model, seed=seed)}
    run.emit("diagnose", body)
    if rep.H_verdict == "fails":
        raise HypothesisFailure(f"H(gamma0={gamma0}) fails: {rep.verdicts}", rep.verdicts)
    if rep.H_verdict == "inconclusive":
        log.warning("H(gamma0=%s) inconclusive: %s", gamma0, rep.verdicts)


def stage_simulate(run: Run):
    s = run.cfg["simulation"]
    seeds = spawn_seeds(run.seed("simulate"), 3)
    nu = run.nu_hat()
    horizon = s["horizon"]
    grid = sorted({max(1, horizon // 16), max(1, horizon // 4), horizon})
    sums, *_ = simulate.simulate_sums(run.model, run.init(), grid, s["paths"], seeds[0], run.threads)
    rows = [{"n": n, "mean_sum": float(sums[:, j].mean()), "var_over_n": float(sums[:, j].var(ddof=1) / n)}
            for j, n in enumerate(grid)]
    drift = simulate.estimate_drift(run.model, n=horizon, paths=min(64, s["paths"]), seed=seeds[1])
    decay_init = run.init() if s["init"] is not None else run.model.x0
    decay = simulate.ergodicity_decay(run.model, decay_init, nu, s["decay_horizon"], s["decay_paths"],
                                      seed=seeds[2])
    body = {
        "stationary": {
            "size": len(nu.points),
            "burn_in": nu.extra.get("burn_in"),
            "mean": nu.mean(),
            "variance": nu.var(),
            "quantiles": {"q": [0.005, 0.5, 0.995], "values": nu.quantiles([0.005, 0.5, 0.995])},
        },
        "drift": {"raw_mean": drift, "centering": run.model.m,
                  "centered_mean": drift.value - run.model.m},
        "sums": rows,
        "decay": decay,
    }
    run.emit("simulate", body, rows)


def stage_variance(run: Run):
    v = run.cfg["variance"]
    seeds = spawn_seeds(run.seed("variance"), 3)
    nu = run.nu_hat()
    out = {}
    if "batch" in v["routes"]:
        out["batch"] = variance.sigma2_batch(run.model, nu, v["n_grid"], v["paths"], seeds[0], run.threads)
    if "poisson" in v["routes"]:
        out["poisson"] = variance.sigma2_poisson(run.model, nu, points=v["points"], seed=seeds[1])
    deg = variance.degeneracy_test(run.model, out.get("batch") or out.get("poisson"), out.get("poisson"),
                                   nu, seed=seeds[2])
    chosen = min(out.values(), key=lambda e: e.se + e.tail_bound)
    checks = {}
    if "batch" in out and "poisson" in out:
        b, p = out["batch"], out["poisson"]
        allowance = 4.0 * math.hypot(b.se, p.se) + b.tail_bound + p.tail_bound + 0.02 * max(b.sigma2, p.sigma2)
        checks["routes_agree"] = {"difference": abs(b.sigma2 - p.sigma2), "allowance": allowance,
                                  "ok": abs(b.sigma2 - p.sigma2) <= allowance}
    run.variance = {"chosen": chosen, "degeneracy": deg}
    body = {"estimates": out, "chosen": chosen.method, "sigma2": chosen.sigma2, "degeneracy": deg,
            "checks": checks}
    rows = [{"method": k, "sigma2": e.sigma2, "se": e.se, "tail_bound": e.tail_bound} for k, e in out.items()]
    run.emit("variance", body, rows)


def stage_spectral(run: Run):
    sp = run.cfg["spectral"]
    try:
        grid = spectral.make_grid(run.model, sp["grid"], sp["window"], run.nu_hat())
    except UnsupportedModelError as err:
        run.emit("spectral", {"status": "skipped", "reason": str(err)})
        return
    ts = np.linspace(-sp["t_max"], sp["t_max"], sp["t_points"])
    table = spectral.eigen_scan(run.model, grid, ts)
    p0 = spectral.build_operator(run.model, grid, 0.0)
    row_err = float(np.max(np.abs(p0.entries.sum(axis=1) - 1.0)))
    mods = [r["modulus"] for r in table]
    lam = [complex(r["re"], r["im"]) for r in table]
    conj_err = max((abs(lam[i] - lam[-1 - i].conjugate()) for i in range(len(lam))
                    if not (math.isnan(lam[i].real) or math.isnan(lam[-1 - i].real))), default=0.0)
    at0 = spectral.leading_eigen(p0)
    checks = {
        "row_sums": {"max_error": row_err, "ok": row_err <= 1e-10},
        "lambda0": {"error": abs(at0.value - 1.0), "ok": abs(at0.value - 1.0) <= 1e-8},
        "modulus_bound": {"max": max(mods), "ok": max(mods) <= 1.0 + 1e-8},
        "conjugate_symmetry": {"max_error": conj_err, "ok": conj_err <= 1e-10},
    }
    body = {"status": "ok", "grid": grid.to_dict(), "leak": p0.leak, "gap_at_0": at0.gap,
            "second_modulus_at_0": at0.second, "checks": checks}
    try:
        prior = run.variance["chosen"].sigma2 if hasattr(run, "variance") else 0.0
        body["expansion"] = spectral.lambda_expansion(run.model, grid, t_grid=ts[ts != 0][::4],
                                                      sigma2_prior=prior)
    except LipCLTError as err:
        body["expansion"] = {"error": str(err)}
    if sp["scan"]:
        body["peripheral"] = spectral.peripheral_scan(run.model, grid, tuple(sp["scan_range"]))
        run.peripheral = body["peripheral"]
    for name, c in checks.items():
        if not c["ok"]:
            run.failures.append(f"spectral.{name}")
    run.emit("spectral", body, table)


def stage_clt(run: Run):
    h = run.cfg["harness"]
    seeds = spawn_seeds(run.seed("clt"), 2)
    if h["sigma2"] is not None:
        sigma2, source = float(h["sigma2"]), "config"
        degenerate = False
    else:
        chosen = run.variance["chosen"]
        sigma2, source = chosen.sigma2, chosen.method
        degenerate = run.variance["degeneracy"].verdict == "degenerate-coboundary-suspected"
    body = {"sigma2": sigma2, "sigma2_source": source}
    rows = None
    if degenerate or not sigma2 > 0:
        body["clt"] = {"status": "refused", "reason": "sigma^2 = 0 (degenerate model): no Gaussian limit to test"}
    else:
        rep = harness.clt_test(run.model, sigma2, h["n_grid"], h["paths"], seeds[0], None, run.threads)
        rep.sigma2_source = source
        body["clt"] = rep
        rows = rep.rows()
    loc = h["local"]
    if loc is not None and "clt" in body and not isinstance(body["clt"], dict):
        try:
            body["local"] = harness.local_clt_test(
                run.model, sigma2, loc["h"], loc["n_grid"], loc["paths"], seeds[1],
                override=loc["override"], peripheral=getattr(run, "peripheral", None), threads=run.threads)
        except HypothesisFailure as err:
            body["local"] = {"status": "refused", "reason": str(err)}
    run.emit("clt", body, rows)


STAGES = {
    "diagnose": stage_diagnose,
    "simulate": stage_simulate,
    "variance": stage_variance,
    "spectral": stage_spectral,
    "clt": stage_clt,
}


def run_experiment(config, out_dir=None, seed=None, threads=None, stages=None, overrides=None) -> dict:
    """Execute the configured stages and write one JSON (and CSV) report per stage.

    ``config`` is a raw config dict or an :class:`Experiment`.  Raises
    :class:`HypothesisFailure` when H(gamma0) fails (the pipeline stops after
    the diagnose report) and :class:`NumericalError` after all reports are
    written if a hard numerical check failed.
    """
    exp = config if isinstance(config, Experiment) else experiment(config, seed, overrides)
    run = Run(exp, out_dir, threads)
    wanted = stages or exp.config["pipeline"]
    if "clt" in wanted and "variance" not in wanted and exp.config["harness"]["sigma2"] is None:
        wanted = [s for s in STAGES if s in set(wanted) | {"variance"}]
    for stage in STAGES:
        if stage in wanted:
            log.info("stage %s", stage)
            STAGES[stage](run)
    manifest = {"config": exp.config, "config_hash": exp.hash, "seed": exp.seed,
                "stages": [s for s in STAGES if s in wanted], "files": sorted(run.files),
                "failures": run.failures}
    run.write("manifest.json", dumps(manifest))
    if run.failures:
        raise NumericalError(f"hard checks failed: {run.failures}", {"failures": run.failures})
    return {"manifest": jsonable(manifest), "reports": run.reports}
