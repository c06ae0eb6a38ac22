"""Declarative experiment configuration (JSON).

Sections and their defaults::

    {
      "seed": 0,                                  master seed
      "pipeline": ["diagnose", "simulate", "variance", "spectral", "clt"],
      "model": {"preset": "doubling_ifs", "params": {}}
             | {"family": "affine", "dim": 1, "a": [...], "b": [...], "weights": null, "alpha": 1.0}
             | {"family": "affine", "a": 0.5, "noise": {"kind": "gaussian", "scale": 1.0}}
             | {"family": "affine", "noise": {"kind": "random_coefficient", "a_low": 0, "a_high": 0.5, "scale": 1}}
             | {"family": "functional_ar", "f": "tanh", "scale": 0.8, "b": [...] | "noise": {...}}
             | {"family": "matrix", "matrices": [...], "weights": null, "gamma1_hint": null}
             | {"family": "matrix", "dim": 2, "noise": {"kind": "lognormal", "sigma": 0.5}},
      "observable": {"kind": "identity" | "coordinate" | "coboundary" | "product" | "zero"
                              | "constant" | "cocycle", ...},     optional for presets
      "centering": null | "estimate" | <number>,  long-run mean subtracted from xi
      "diagnostics": {"gamma0": null (threshold of the annealed CLT + 0.5), "n0max": 3,
                      "nsamples": 100000},
      "simulation": {"paths": 4096, "horizon": 1024, "init": null, "decay_horizon": 30,
                     "decay_paths": 4096},
      "variance": {"n_grid": [256, 1024, 4096], "paths": 4096, "points": 32768,
                   "routes": ["batch", "poisson"]},
      "spectral": {"grid": 513, "window": null, "t_max": 0.5, "t_points": 21,
                   "scan": true, "scan_range": [0.5, 6.283185307179586]},
      "harness": {"n_grid": [256, 1024, 4096], "paths": 20000, "sigma2": null,
                  "local": null | {"h": "gaussian", "n_grid": [1024, 4096], "paths": 100000,
                                   "override": false}}
    }
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import models
from .core import ConstantObservable, ZeroObservable
from .errors import ConfigError, LipCLTError

STAGES = ("diagnose", "simulate", "variance", "spectral", "clt")

DEFAULTS = {
    "seed": 0,
    "pipeline": list(STAGES),
    "centering": None,
    "diagnostics": {"gamma0": None, "n0max": 3, "nsamples": 100_000},
    "simulation": {"paths": 4096, "horizon": 1024, "init": None, "decay_horizon": 30, "decay_paths": 4096},
    "variance": {"n_grid": [256, 1024, 4096], "paths": 4096, "points": 32_768, "routes": ["batch", "poisson"]},
    "spectral": {"grid": 513, "window": None, "t_max": 0.5, "t_points": 21, "scan": True,
                 "scan_range": [0.5, 2 * math.pi]},
    "harness": {"n_grid": [256, 1024, 4096], "paths": 20_000, "sigma2": None, "local": None},
}
LOCAL_DEFAULTS = {"h": "gaussian", "n_grid": [1024, 4096], "paths": 100_000, "override": False}
TOP_KEYS = set(DEFAULTS) | {"model", "observable"}


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()


@dataclass
class Experiment:
    config: dict
    model: object
    seed: int
    hash: str

    def section(self, name):
        return self.config[name]


def load(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}", str(path)) from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON: {err}", str(path)) from None


def _merge(section, given, path):
    if given is None:
        return copy.deepcopy(section)
    if not isinstance(given, dict):
        raise ConfigError("must be an object", path)
    unknown = set(given) - set(section)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", path)
    out = copy.deepcopy(section)
    out.update(given)
    return out


def _positive_int(value, path, minimum=1):
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigError(f"must be an integer >= {minimum}, got {value!r}", path)
    return value


def _int_list(value, path, minimum_len=1):
    if not isinstance(value, list) or len(value) < minimum_len:
        raise ConfigError(f"must be a list of at least {minimum_len} integers", path)
    for i, v in enumerate(value):
        _positive_int(v, f"{path}[{i}]")
    return value


def normalise(raw: dict) -> dict:
    """Fill defaults and validate every section; raises :class:`ConfigError` naming the path."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", "$")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}", "$")
    if "model" not in raw:
        raise ConfigError("missing model section", "model")
    cfg = {"model": copy.deepcopy(raw["model"]), "observable": copy.deepcopy(raw.get("observable"))}
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("must be an unsigned 64-bit integer", "seed")
    cfg["seed"] = seed
    pipeline = raw.get("pipeline", list(STAGES))
    if not isinstance(pipeline, list) or any(s not in STAGES for s in pipeline):
        raise ConfigError(f"stages must be drawn from {list(STAGES)}", "pipeline")
    cfg["pipeline"] = [s for s in STAGES if s in pipeline]
    c = raw.get("centering")
    if not (c is None or c == "estimate" or (isinstance(c, (int, float)) and not isinstance(c, bool))):
        raise ConfigError("must be null, 'estimate' or a number", "centering")
    cfg["centering"] = c
    for name in ("diagnostics", "simulation", "variance", "spectral", "harness"):
        cfg[name] = _merge(DEFAULTS[name], raw.get(name), name)

    d = cfg["diagnostics"]
    if d["gamma0"] is not None and not (isinstance(d["gamma0"], (int, float)) and d["gamma0"] > 0):
        raise ConfigError("must be a positive number or null", "diagnostics.gamma0")
    _positive_int(d["n0max"], "diagnostics.n0max")
    _positive_int(d["nsamples"], "diagnostics.nsamples", 100)
    s = cfg["simulation"]
    for key in ("paths", "horizon", "decay_horizon", "decay_paths"):
        _positive_int(s[key], f"simulation.{key}")
    if not (s["init"] is None or s["init"] == "stationary" or isinstance(s["init"], (list, int, float))):
        raise ConfigError("must be null, 'stationary' or a state", "simulation.init")
    v = cfg["variance"]
    _int_list(v["n_grid"], "variance.n_grid", 3)
    if len(set(v["n_grid"])) != len(v["n_grid"]):
        raise ConfigError("values must be distinct", "variance.n_grid")
    _positive_int(v["paths"], "variance.paths", 2)
    _positive_int(v["points"], "variance.points", 2)
    if not v["routes"] or any(r not in ("batch", "poisson") for r in v["routes"]):
        raise ConfigError("routes must be drawn from ['batch', 'poisson']", "variance.routes")
    sp = cfg["spectral"]
    _positive_int(sp["grid"], "spectral.grid", 3)
    _positive_int(sp["t_points"], "spectral.t_points", 3)
    if not (isinstance(sp["t_max"], (int, float)) and sp["t_max"] > 0):
        raise ConfigError("must be positive", "spectral.t_max")
    if sp["window"] is not None and (not isinstance(sp["window"], list) or len(sp["window"]) != 2
                                     or not sp["window"][0] < sp["window"][1]):
        raise ConfigError("must be null or [low, high] with low < high", "spectral.window")
    lo, hi = sp["scan_range"]
    if not (0 < lo < hi or lo < hi < 0):
        raise ConfigError("must be an interval excluding 0", "spectral.scan_range")
    h = cfg["harness"]
    _int_list(h["n_grid"], "harness.n_grid", 1)
    _positive_int(h["paths"], "harness.paths", 2)
    if h["sigma2"] is not None and not (isinstance(h["sigma2"], (int, float)) and h["sigma2"] > 0):
        raise ConfigError("must be a positive number or null", "harness.sigma2")
    if h["local"] is not None:
        h["local"] = _merge(LOCAL_DEFAULTS, h["local"], "harness.local")
        from .harness import H_FAMILIES

        if h["local"]["h"] not in H_FAMILIES:
            raise ConfigError(f"unknown test function; choose from {sorted(H_FAMILIES)}", "harness.local.h")
        _int_list(h["local"]["n_grid"], "harness.local.n_grid")
        _positive_int(h["local"]["paths"], "harness.local.paths", 2)
    if "clt" in cfg["pipeline"] and "variance" not in cfg["pipeline"] and h["sigma2"] is None:
        raise ConfigError("the clt stage needs sigma^2: enable the variance stage or set harness.sigma2",
                          "harness.sigma2")
    return cfg


# ---------------------------------------------------------------------------
# model construction


def _atoms_or_noise(spec, path):
    if "noise" in spec and any(k in spec for k in ("b", "matrices")):
        raise ConfigError("give either atoms or a noise law, not both", path)


def _weights(spec, k, path):
    w = spec.get("weights")
    if w is None:
        return None
    if not isinstance(w, list) or len(w) != k:
        raise ConfigError(f"must list {k} weights", f"{path}.weights")
    return w


def _observable(obs, path):
    kind = obs.get("kind")
    allowed = {
        "identity": {"shift"}, "coordinate": {"index", "shift"}, "coboundary": {"shift"},
        "product": {"u", "chi_shift"}, "zero": set(), "constant": {"value"}, "cocycle": set(),
    }
    if kind not in allowed:
        raise ConfigError(f"unknown observable kind {kind!r}; choose from {sorted(allowed)}", f"{path}.kind")
    extra = set(obs) - allowed[kind] - {"kind"}
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}", path)
    if kind == "identity":
        return models.identity_observable(float(obs.get("shift", 0.0)))
    if kind == "coordinate":
        from .core import StateFunction

        i, shift = int(obs.get("index", 0)), float(obs.get("shift", 0.0))
        return StateFunction(models.coordinate(i, shift), name=f"coordinate{i}", r=1.0, s=0.0,
                             bound=max(1.0, abs(shift)), slope=1.0, params={"index": i, "shift": shift})
    if kind == "coboundary":
        return models.coboundary_observable(float(obs.get("shift", 0.0)))
    if kind == "product":
        if "u" not in obs:
            raise ConfigError("product observable needs per-atom values u", f"{path}.u")
        return models.product_observable(obs["u"], obs.get("chi_shift"))
    if kind == "zero":
        return ZeroObservable()
    if kind == "constant":
        return ConstantObservable(float(obs.get("value", 1.0)))
    return models.Cocycle()


def _affine(spec, path):
    _atoms_or_noise(spec, path)
    dim = int(spec.get("dim", 1))
    alpha = float(spec.get("alpha", 1.0))
    noise = spec.get("noise")
    if noise is None:
        if "a" not in spec or "b" not in spec:
            raise ConfigError("affine atoms need both a and b", path)
        k = len(spec["b"])
        return models.AffineSpec(dim=dim, a=spec["a"], b=spec["b"], weights=_weights(spec, k, path),
                                 alpha=alpha, description={"family": "affine"})
    kind = noise.get("kind")
    if kind == "gaussian":
        if "a" not in spec:
            raise ConfigError("gaussian-noise affine model needs a", f"{path}.a")
        sampler = models.gaussian_noise_sampler(spec["a"], float(noise.get("scale", 1.0)), dim)
    elif kind == "random_coefficient":
        if dim != 1:
            raise ConfigError("random coefficients are scalar", f"{path}.dim")
        try:
            sampler = models.random_coefficient_sampler(float(noise["a_low"]), float(noise["a_high"]),
                                                        float(noise.get("scale", 1.0)))
        except KeyError as err:
            raise ConfigError(f"missing {err.args[0]}", f"{path}.noise") from None
    else:
        raise ConfigError(f"unknown noise kind {kind!r}", f"{path}.noise.kind")
    return models.AffineSpec(dim=dim, sampler=sampler, alpha=alpha,
                             description={"family": "affine", "noise": dict(noise)})


def _functional(spec, path):
    _atoms_or_noise(spec, path)
    name = spec.get("f")
    if name not in models.FUNCTIONAL_MAPS:
        raise ConfigError(f"unknown f; choose from {sorted(models.FUNCTIONAL_MAPS)}", f"{path}.f")
    scale = float(spec.get("scale", 1.0))
    f, lip = models.FUNCTIONAL_MAPS[name]
    desc = {"family": "functional_ar", "f": name, "scale": scale}
    fn = lambda x, f=f, scale=scale: f(x, scale)  # noqa: E731
    if "noise" in spec:
        noise = spec["noise"]
        if noise.get("kind") != "gaussian":
            raise ConfigError("functional AR noise must be gaussian", f"{path}.noise.kind")
        sd = float(noise.get("scale", 1.0))
        return models.FunctionalARSpec(fn, lip(scale), sampler=lambda rng, n: rng.normal(scale=sd, size=n),
                                       description=dict(desc, noise=dict(noise)))
    if "b" not in spec:
        raise ConfigError("functional AR needs noise atoms b or a noise law", path)
    return models.FunctionalARSpec(fn, lip(scale), b=spec["b"], weights=_weights(spec, len(spec["b"]), path),
                                   description=desc)


def build_model(cfg: dict, seed: int = 0):
    """Instantiate the model of a normalised config."""
    spec = cfg["model"]
    path = "model"
    if not isinstance(spec, dict):
        raise ConfigError("must be an object", path)
    obs_cfg = cfg.get("observable")
    xi = _observable(obs_cfg, "observable") if obs_cfg is not None else None
    try:
        if "preset" in spec:
            extra = set(spec) - {"preset", "params"}
            if extra:
                raise ConfigError(f"unknown keys {sorted(extra)}", path)
            name = spec["preset"]
            if name not in models.PRESETS:
                raise ConfigError(f"unknown preset {name!r}; choose from {sorted(models.PRESETS)}",
                                  f"{path}.preset")
            params = spec.get("params", {}) or {}
            try:
                model = models.PRESETS[name](**params)
            except TypeError as err:
                raise ConfigError(str(err), f"{path}.params") from None
            if xi is not None:
                model = model.with_observable(xi)
        else:
            family = spec.get("family")
            if family == "affine":
                model = models.make_affine(_affine(spec, path), xi or models.identity_observable())
            elif family == "functional_ar":
                model = models.make_functional_ar(_functional(spec, path), xi or models.identity_observable())
            elif family == "matrix":
                model = _matrix(spec, path, xi, seed)
            else:
                raise ConfigError(f"unknown model family {family!r}; choose from "
                                  "['affine', 'functional_ar', 'matrix'] or give a preset", f"{path}.family")
    except ConfigError:
        raise
    except LipCLTError as err:
        raise ConfigError(str(err), path) from None
    except (ValueError, IndexError) as err:
        raise ConfigError(f"inconsistent parameters: {err}", path) from None
    c = cfg.get("centering")
    if isinstance(c, (int, float)):
        model = model.with_centering(float(c), source="config")
    elif c == "estimate":
        from .variance import center

        model = center(model, seed=seed)
    return model


def _matrix(spec, path, xi, seed):
    _atoms_or_noise(spec, path)
    hint = spec.get("gamma1_hint")
    if "noise" in spec:
        noise = spec["noise"]
        if noise.get("kind") != "lognormal":
            raise ConfigError("matrix noise must be lognormal", f"{path}.noise.kind")
        dim = int(spec.get("dim", 2))
        ms = models.PositiveMatrixSpec(dim=dim, sampler=models.lognormal_matrix_sampler(
            dim, float(noise.get("sigma", 0.5)), float(noise.get("mean", 0.0))),
            description={"family": "matrix", "noise": dict(noise)})
    else:
        mats = np.asarray(spec.get("matrices"), dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ConfigError("must be a list of square matrices", f"{path}.matrices")
        ms = models.PositiveMatrixSpec(dim=mats.shape[1], matrices=mats,
                                       weights=_weights(spec, len(mats), path),
                                       description={"family": "matrix"})
    model = models.make_matrix_model(ms, gamma1_hint=hint, seed=seed)
    if xi is not None and not isinstance(xi, models.Cocycle):
        model = model.with_observable(xi)
    return model


def experiment(raw: dict, seed: int | None = None, overrides: dict | None = None) -> Experiment:
    """Normalise ``raw`` (with CLI ``overrides`` as ``{"section.key": value}``) and build the model."""
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = seed
    for key, value in (overrides or {}).items():
        section, _, field_name = key.partition(".")
        raw.setdefault(section, {})
        if raw[section] is None:
            raw[section] = {}
        raw[section][field_name] = value
    cfg = normalise(raw)
    model = build_model(cfg, cfg["seed"])
    return Experiment(cfg, model, cfg["seed"], config_hash(cfg))
