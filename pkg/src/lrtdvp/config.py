"""Declarative run configuration: schema, validation and model assembly.

A configuration is a YAML mapping::

    model:
      name: tfim
      params: {Lx: 3, Ly: 2, h_x: 0.75}
    engine: lrtdvp
    solver: {t1: 50, abs_tol: 1.0e-9, rel_tol: 1.0e-7, n_outputs: 101}
    rank: {eps_max: 1.0e-3, eps_min: 1.0e-5, M_min: 6, M_max: 12}
    observables: [dM_y, M_y]
    output: {dir: out, prefix: tfim}
    sweep: {parameter: model.params.h_x, values: [0.5, 0.75, 1.0]}

Rates are in units of the single-photon/spin decay rate (spin and cavity
models) or of ``kappa2`` (cat gates). Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .control import CHI_VARIANTS, INFLATION_RULES, RankPolicy
from .numerics import PinvConfig
from .tdvp import SolverConfig

ENGINES = ("lrtdvp", "oracle", "baseline")
MODELS = ("xyz", "tfim", "faf", "cat")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = f"line {line}: " if line else ""
        field_ = f"{path}: " if path else ""
        super().__init__(f"{where}{field_}{message}")


# key -> (kind, default); kind is one of float, int, str, bool, "floats", "values", "complex", "str|none"
SOLVER_SCHEMA = {
    "t0": (float, 0.0),
    "t1": (float, None),
    "abs_tol": (float, 1e-10),
    "rel_tol": (float, 1e-8),
    "max_step": (float, math.inf),
    "n_outputs": (int, 51),
    "output_times": ("floats", []),
    "trace_tol": (float, 1e-8),
    "gram_tol": (float, 1e-8),
    "pinv_atol": (float, 1e-6),
    "pinv_rtol": (float, 1e-5),
}
RANK_SCHEMA = {
    "chi_variant": (str, "projected_trace"),
    "eps_max": (float, 1e-4),
    "eps_min": (float, 0.0),
    "M_min": (int, 1),
    "M_max": (int, 10**9),
    "checkpoint_interval": (float, 0.0),
    "inflation_rule": (str, "leakage_svd"),
    "retry_budget": (int, 5),
    "adaptive": (bool, True),
}
BASELINE_SCHEMA = {
    "dt": (float, 1e-3),
    "eps_max": (float, 1e-4),
    "max_rank": ("int|none", None),
}
OUTPUT_SCHEMA = {
    "dir": (str, "."),
    "prefix": (str, "run"),
    "dump_state": (bool, False),
    "steps": (bool, True),
}
SWEEP_SCHEMA = {
    "parameter": (str, None),
    "values": ("values", None),
}
TOP_KEYS = ("model", "engine", "solver", "rank", "baseline", "observables", "output", "sweep", "seed")

MODEL_SCHEMAS = {
    "xyz": {
        "Lx": (int, 2), "Ly": (int, 2), "J_x": (float, 0.9), "J_y": (float, 1.0), "J_z": (float, 1.0),
        "h_z": (float, 0.0), "h_x": (float, 0.0), "gamma": (float, 1.0), "initial_rank": ("int|none", None),
    },
    "tfim": {
        "Lx": (int, 3), "Ly": (int, 2), "h_x": (float, 0.75), "gamma": (float, 1.0), "initial_rank": (int, 6),
    },
    "faf": {
        "N": (int, 2), "Delta": (float, -10.0), "U": (float, 10.0), "G": ("complex", 0.0), "J": (float, -10.0),
        "gamma": (float, 1.0), "eta": (float, 1.0), "M_pm": (int, 2), "cutoff": ("int|none", None),
    },
    "cat": {
        "N": (int, 1), "alpha": (float, 2.0), "kappa1": (float, 1e-3), "kappa2": (float, 1.0),
        "T": ("float|none", None), "epsilon": ("float|none", None), "M_pm": (int, 3),
        "cutoff": ("int|none", None), "initial": (str, "plus"), "gate": ("str|none", None),
        "q_max": ("int|none", None),
    },
}


# ---------------------------------------------------------------- line lookup

def _line_index(text: str) -> dict:
    """Map dotted key paths to 1-based source lines."""
    out = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                out[path] = k.start_mark.line + 1
                walk(v, path)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                path = f"{prefix}[{i}]"
                out[path] = v.start_mark.line + 1
                walk(v, path)

    if root is not None:
        walk(root, "")
    return out


class _Ctx:
    def __init__(self, lines: dict):
        self.lines = lines

    def error(self, path: str, message: str):
        line = self.lines.get(path)
        if line is None:
            # fall back to the nearest enclosing key that has a line
            parts = path.split(".")
            while parts and line is None:
                parts.pop()
                line = self.lines.get(".".join(parts))
        raise ConfigError(message, path, line)


def _coerce(ctx: _Ctx, path: str, kind, value):
    if kind == "int|none" or kind == "float|none" or kind == "str|none":
        if value is None:
            return None
        kind = {"int|none": int, "float|none": float, "str|none": str}[kind]
    if kind is bool:
        if not isinstance(value, bool):
            ctx.error(path, f"expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            ctx.error(path, f"expected an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, str):
            # YAML 1.1 reads '1e-3' as a string; accept any float literal
            try:
                return float(value)
            except ValueError:
                ctx.error(path, f"expected a number, got {value!r}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            ctx.error(path, f"expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            ctx.error(path, f"expected a string, got {value!r}")
        return value
    if kind == "complex":
        if isinstance(value, (list, tuple)) and len(value) == 2:
            re, im = (_coerce(ctx, path, float, v) for v in value)
            return [re, im] if im != 0 else re
        return _coerce(ctx, path, float, value)
    if kind == "floats":
        if not isinstance(value, list):
            ctx.error(path, f"expected a list of numbers, got {value!r}")
        return [_coerce(ctx, f"{path}[{i}]", float, v) for i, v in enumerate(value)]
    if kind == "values":
        if not isinstance(value, list) or not value:
            ctx.error(path, "expected a non-empty list")
        return list(value)
    raise AssertionError(kind)


def _section(ctx: _Ctx, raw, schema: dict, path: str) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        ctx.error(path, "expected a mapping")
    for k in raw:
        if k not in schema:
            ctx.error(f"{path}.{k}", f"unknown key {k!r}; allowed: {', '.join(schema)}")
    out = {}
    for k, (kind, default) in schema.items():
        out[k] = _coerce(ctx, f"{path}.{k}", kind, raw[k]) if k in raw else copy.deepcopy(default)
    return out


# ---------------------------------------------------------------- validation

def validate(raw: dict, lines: dict | None = None) -> dict:
    """Return the fully resolved configuration (all defaults filled in)."""
    ctx = _Ctx(lines or {})
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    for k in raw:
        if k not in TOP_KEYS:
            ctx.error(k, f"unknown key {k!r}; allowed: {', '.join(TOP_KEYS)}")
    model = raw.get("model")
    if not isinstance(model, dict):
        ctx.error("model", "a 'model' mapping with 'name' and 'params' is required")
    for k in model:
        if k not in ("name", "params"):
            ctx.error(f"model.{k}", f"unknown key {k!r}; allowed: name, params")
    name = model.get("name")
    if name not in MODELS:
        ctx.error("model.name", f"unknown model {name!r}; choose from {', '.join(MODELS)}")
    params = _section(ctx, model.get("params"), MODEL_SCHEMAS[name], "model.params")

    engine = raw.get("engine", "lrtdvp")
    if engine not in ENGINES:
        ctx.error("engine", f"unknown engine {engine!r}; choose from {', '.join(ENGINES)}")
    solver = _section(ctx, raw.get("solver"), SOLVER_SCHEMA, "solver")
    rank = _section(ctx, raw.get("rank"), RANK_SCHEMA, "rank")
    baseline = _section(ctx, raw.get("baseline"), BASELINE_SCHEMA, "baseline")
    output = _section(ctx, raw.get("output"), OUTPUT_SCHEMA, "output")
    seed = _coerce(ctx, "seed", int, raw.get("seed", 0))

    if rank["chi_variant"] not in CHI_VARIANTS:
        ctx.error("rank.chi_variant", f"unknown chi variant; choose from {', '.join(CHI_VARIANTS)}")
    if rank["inflation_rule"] not in INFLATION_RULES:
        ctx.error("rank.inflation_rule", f"unknown rule; choose from {', '.join(INFLATION_RULES)}")

    resolved = {"model": {"name": name, "params": params}, "engine": engine, "solver": solver,
                "rank": rank, "baseline": baseline, "output": output, "seed": seed}

    # model-specific checks and the default end time of a gate
    if name == "cat":
        if params["T"] is not None and params["epsilon"] is not None:
            ctx.error("model.params.epsilon", "give either T or epsilon, not both")
        if params["T"] is None and params["epsilon"] is None:
            params["T"] = 10.0
        if solver["t1"] is None:
            solver["t1"] = _cat_params(params).T
    if solver["t1"] is None:
        ctx.error("solver.t1", "end time t1 is required")
    try:
        solver_config(resolved)
    except ValueError as exc:
        ctx.error("solver", str(exc))
    try:
        rank_policy(resolved, 1)
    except ValueError as exc:
        ctx.error("rank", str(exc))
    if not baseline["dt"] > 0:
        ctx.error("baseline.dt", "dt must be positive")

    # parameter objects only; operators are not allocated during validation
    params_obj = params_object(name, params, ctx)
    available = observable_names(name, params_obj)
    obs = raw.get("observables")
    if obs is None:
        obs = list(available)
    elif not isinstance(obs, list) or not all(isinstance(o, str) for o in obs):
        ctx.error("observables", "expected a list of observable names")
    for i, o in enumerate(obs):
        if o not in available:
            ctx.error(f"observables[{i}]",
                      f"unknown observable {o!r} for model {name}; available: {', '.join(available)}")
    resolved["observables"] = list(obs)

    sweep = raw.get("sweep")
    if sweep is not None:
        sw = _section(ctx, sweep, SWEEP_SCHEMA, "sweep")
        if sw["parameter"] is None or sw["values"] is None:
            ctx.error("sweep", "sweep needs 'parameter' and 'values'")
        target = sw["parameter"].split(".")
        probe = resolved
        for part in target[:-1]:
            if not isinstance(probe, dict) or part not in probe:
                ctx.error("sweep.parameter", f"no such parameter {sw['parameter']!r}")
            probe = probe[part]
        if not isinstance(probe, dict) or target[-1] not in probe or target[0] in ("sweep", "output"):
            ctx.error("sweep.parameter", f"no such parameter {sw['parameter']!r}")
        # every value must itself produce a valid configuration
        for i, v in enumerate(sw["values"]):
            try:
                validate(with_parameter(_strip_sweep(resolved), sw["parameter"], v))
            except ConfigError as exc:
                ctx.error(f"sweep.values[{i}]", f"value {v!r} invalid: {exc}")
        resolved["sweep"] = sw
    else:
        resolved["sweep"] = None
    return resolved


def _strip_sweep(cfg: dict) -> dict:
    out = copy.deepcopy(cfg)
    out.pop("sweep", None)
    return out


def with_parameter(cfg: dict, dotted: str, value) -> dict:
    out = copy.deepcopy(cfg)
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = value
    return out


def sweep_configs(cfg: dict) -> list[dict]:
    """One resolved configuration per sweep value, in the given order."""
    sw = cfg["sweep"]
    if sw is None:
        return [cfg]
    base = _strip_sweep(cfg)
    out = []
    for v in sw["values"]:
        c = validate(with_parameter(base, sw["parameter"], v))
        out.append(c)
    return out


def load(path) -> dict:
    """Read, parse and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from exc
    return validate(raw if raw is not None else {}, _line_index(text))


# ---------------------------------------------------------------- assembly

@dataclass
class ModelSpec:
    """Everything an engine needs: model, initial state and named observables."""

    model: object
    state: object
    observables: dict
    params: object
    extra: dict = dataclasses.field(default_factory=dict)


def _cat_params(p: dict):
    from .models.cat import CatGateParams

    kw = {k: p[k] for k in ("N", "alpha", "kappa1", "kappa2", "M_pm", "cutoff", "initial")}
    if p.get("epsilon") is not None:
        return CatGateParams.from_epsilon(p["epsilon"], **kw)
    return CatGateParams(T=p["T"] if p.get("T") is not None else 10.0, **kw)


def pinv_of(solver: dict) -> PinvConfig:
    return PinvConfig(atol=solver["pinv_atol"], rtol=solver["pinv_rtol"])


def params_object(name: str, p: dict, ctx: _Ctx | None = None):
    """The model's parameter dataclass; its own checks surface as config errors."""
    ctx = ctx or _Ctx({})
    try:
        if name in ("xyz", "tfim"):
            from .models.spin import XYZParams, tfim_params

            params = XYZParams(**p) if name == "xyz" else tfim_params(**p)
            params.lattice  # dimension checks
            return params
        if name == "faf":
            from .models.bosonic import FAFParams

            G = complex(*p["G"]) if isinstance(p["G"], list) else p["G"]
            return FAFParams(**{**p, "G": G})
        if name == "cat":
            from .models.cat import GATES

            params = _cat_params(p)
            if p["gate"] is not None and GATES.get(p["gate"]) != params.N:
                raise ValueError(f"gate {p['gate']!r} does not act on {params.N} modes")
            return params
    except (ValueError, TypeError) as exc:
        ctx.error("model.params", str(exc))
    raise AssertionError(name)


def observable_names(name: str, params) -> list[str]:
    if name in ("xyz", "tfim"):
        return ["M_y", "dM_y", "M_z"] + (["S_xx"] if params.n_sites > 1 else [])
    if name == "faf":
        pairs = [f"g1_{i}{j}" for i in range(params.N) for j in range(i + 1, params.N)]
        return pairs + [f"n_{i}" for i in range(params.N)]
    return ["P_Z", "P_X"]


def build_spec(cfg: dict, ctx: _Ctx | None = None) -> ModelSpec:
    """Construct model, initial state and observables from a resolved configuration."""
    ctx = ctx or _Ctx({})
    name = cfg["model"]["name"]
    p = cfg["model"]["params"]
    try:
        pinv = pinv_of(cfg["solver"])
    except ValueError as exc:
        ctx.error("solver.pinv_atol", str(exc))
    params = params_object(name, p, ctx)
    try:
        if name in ("xyz", "tfim"):
            from .models.spin import build_xyz, xyz_observables

            model, state = build_xyz(params, pinv)
            return ModelSpec(model, state, xyz_observables(params.lattice), params)
        if name == "faf":
            from .models.bosonic import build_faf, g1_observable, photon_number

            model, state = build_faf(params, pinv)
            obs = {}
            for i in range(params.N):
                for j in range(i + 1, params.N):
                    o = g1_observable(params.fock, i, j)
                    obs[o.name] = o
            for i in range(params.N):
                o = photon_number(params.fock, i)
                obs[o.name] = o
            return ModelSpec(model, state, obs, params)
        if name == "cat":
            from .models.cat import GATES, build_cat_gate, readout_observables

            gate = p["gate"] or next(g for g, n in GATES.items() if n == params.N)
            model, state = build_cat_gate(params, gate, pinv)
            return ModelSpec(model, state, readout_observables(params, p["q_max"]), params,
                             {"gate": gate, "T": params.T, "epsilon": params.epsilon})
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        ctx.error("model.params", str(exc))
    raise AssertionError(name)


def solver_config(cfg: dict, keep_states: bool = False) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(t0=s["t0"], t1=s["t1"], abs_tol=s["abs_tol"], rel_tol=s["rel_tol"],
                        max_step=s["max_step"], output_times=tuple(s["output_times"]),
                        n_outputs=s["n_outputs"], pinv=pinv_of(s), trace_tol=s["trace_tol"],
                        gram_tol=s["gram_tol"], keep_states=keep_states)


def rank_policy(cfg: dict, rank0: int) -> RankPolicy | None:
    r = cfg["rank"]
    if not r["adaptive"]:
        return RankPolicy.fixed(rank0, r["chi_variant"])
    kw = {k: r[k] for k in RANK_SCHEMA if k != "adaptive"}
    return RankPolicy(seed=cfg["seed"], **kw)


def jsonable(cfg: dict) -> dict:
    """Resolved config with infinities spelled as strings YAML and JSON both accept."""

    def fix(x):
        if isinstance(x, dict):
            return {k: fix(v) for k, v in x.items()}
        if isinstance(x, list):
            return [fix(v) for v in x]
        if isinstance(x, float) and math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if isinstance(x, np.generic):
            return x.item()
        return x

    return fix(cfg)
