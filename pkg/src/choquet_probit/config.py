"""YAML run configuration.

A run file has optional sections ``data``, ``output``, ``model``, ``error``,
``optimizer``, ``simulation`` and ``analyze``.  Every parse error carries the
dotted location of the offending entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import yaml

from .choquet import CiAttribute, CutoffRule, SpecError, UtilitySpec, WsTerm
from .estimator import OptimizerConfig
from .membership import SHAPES, Direction, MembershipError, MinMaxRange, make_membership, shape_name
from .mnp import CholeskyMap, ErrorKind, ErrorStructure, HaltonPlan, KernelError
from .simulation import DgpConfig, design_dgp

SECTIONS = ("data", "output", "model", "error", "optimizer", "simulation", "analyze")


class ConfigError(ValueError):
    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


@dataclass(frozen=True)
class MarginalEffectRequest:
    attribute: str
    pct_change: float
    alternatives: tuple[int, ...] | None = None


@dataclass(frozen=True)
class RunConfig:
    data_path: str | None = None
    out_dir: str = "out"
    spec: UtilitySpec | None = None
    error: ErrorStructure | None = None
    optimizer: OptimizerConfig = OptimizerConfig()
    dgp: DgpConfig | None = None
    replication: int = 0
    result_path: str | None = None
    marginal_effects: tuple[MarginalEffectRequest, ...] = ()
    raw: dict = field(default_factory=dict, compare=False)


class _Section:
    """Typed access to one mapping that remembers its location and unread keys."""

    def __init__(self, data: Any, location: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("expected a mapping", location)
        self.data = data
        self.location = location
        self.used: set[str] = set()

    def loc(self, key) -> str:
        return f"{self.location}.{key}" if self.location else str(key)

    def has(self, key: str) -> bool:
        return key in self.data and self.data[key] is not None

    def get(self, key: str, kind, default=None, required: bool = False):
        self.used.add(key)
        if not self.has(key):
            if required:
                raise ConfigError("required entry missing", self.loc(key))
            return default
        value = self.data[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is float and isinstance(value, str):
            # YAML 1.1 resolves exponent forms without a dot, such as 1e-9, to strings
            try:
                value = float(value)
            except ValueError:
                pass
        if kind is int and isinstance(value, bool) or not isinstance(value, kind):
            names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
            raise ConfigError(f"expected {names}, got {type(value).__name__}", self.loc(key))
        return value

    def sub(self, key: str) -> "_Section":
        self.used.add(key)
        return _Section(self.data.get(key), self.loc(key))

    def items(self, key: str) -> list[tuple[Any, str]]:
        seq = self.get(key, list, [])
        return [(v, f"{self.loc(key)}[{n}]") for n, v in enumerate(seq)]

    def finish(self):
        extra = sorted(set(map(str, self.data)) - self.used)
        if extra:
            raise ConfigError(f"unknown entr{'y' if len(extra) == 1 else 'ies'} {', '.join(extra)}", self.location)


def _int_tuple(value, location: str) -> tuple[int, ...]:
    if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ConfigError("expected a list of integers", location)
    return tuple(value)


def _wrap(location: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (SpecError, MembershipError, KernelError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), location) from None


def parse_normalization(data, location: str):
    sec = _Section(data, location)
    kind = sec.get("type", str, required=True)
    if kind == "minmax":
        rule = _wrap(sec.loc("direction"), MinMaxRange, sec.get("direction", str, "positive"))
    elif kind == "membership":
        shape = sec.get("shape", str, required=True)
        points = sec.get("points", list, required=True)
        rule = _wrap(sec.loc("points"), make_membership, shape, points)
    elif kind == "cutoff":
        shape = sec.get("shape", str, required=True)
        covs = sec.get("covariates", list, [])
        if not all(isinstance(c, list) and all(isinstance(x, str) for x in c) for c in covs):
            raise ConfigError("expected one list of column names per point", sec.loc("covariates"))
        rule = _wrap(sec.loc("shape"), CutoffRule, shape, tuple(tuple(c) for c in covs))
    else:
        raise ConfigError(f"unknown normalisation type {kind!r} (minmax, membership, cutoff)", sec.loc("type"))
    sec.finish()
    return rule


def normalization_to_dict(rule) -> dict:
    if isinstance(rule, MinMaxRange):
        return {"type": "minmax", "direction": rule.direction.value}
    if isinstance(rule, CutoffRule):
        return {"type": "cutoff", "shape": rule.shape, "covariates": [list(c) for c in rule.covariates]}
    return {"type": "membership", "shape": shape_name(rule), "points": [float(p) for p in rule.points]}


def parse_spec(data, location: str = "model") -> UtilitySpec:
    sec = _Section(data, location)
    attrs = []
    for item, loc in sec.items("ci_attributes"):
        a = _Section(item, loc)
        name = a.get("name", str, required=True)
        rule = parse_normalization(a.data.get("normalization", {"type": "minmax"}), a.loc("normalization"))
        a.used.add("normalization")
        overrides = []
        for ov, oloc in a.items("alternative_overrides"):
            o = _Section(ov, oloc)
            alts = _int_tuple(o.get("alternatives", list, required=True), o.loc("alternatives"))
            orule = parse_normalization(o.get("normalization", dict, required=True), o.loc("normalization"))
            o.finish()
            overrides.append((alts, orule))
        attrs.append(CiAttribute(name, a.get("column", str, name), rule, tuple(overrides)))
        a.finish()
    terms = []
    for item, loc in sec.items("ws_terms"):
        t = _Section(item, loc)
        alts = t.get("alternatives", list)
        terms.append(
            WsTerm(
                t.get("column", str, required=True),
                None if alts is None else _int_tuple(alts, t.loc("alternatives")),
                t.get("generic", bool, True),
            )
        )
        t.finish()
    groups = sec.get("capacity_groups", list)
    if groups is not None:
        groups = tuple(_int_tuple(g, f"{sec.loc('capacity_groups')}[{n}]") for n, g in enumerate(groups))
    spec = _wrap(
        location,
        UtilitySpec,
        n_alternatives=sec.get("n_alternatives", int, required=True),
        ci_attributes=tuple(attrs),
        ws_terms=tuple(terms),
        asc=sec.get("asc", bool, True),
        capacity_groups=groups,
        aggregation=sec.get("aggregation", str, "choquet"),
        ci_scale=sec.get("ci_scale", float, 1.0),
        estimate_scale=sec.get("estimate_scale", bool, False),
    )
    sec.finish()
    return spec


def spec_to_dict(spec: UtilitySpec) -> dict:
    attrs = []
    for a in spec.ci_attributes:
        attrs.append(
            {
                "name": a.name,
                "column": a.column,
                "normalization": normalization_to_dict(a.rule),
                "alternative_overrides": [
                    {"alternatives": list(alts), "normalization": normalization_to_dict(r)} for alts, r in a.alt_rules
                ],
            }
        )
    return {
        "n_alternatives": spec.n_alternatives,
        "aggregation": spec.aggregation,
        "asc": spec.asc,
        "capacity_groups": [list(g) for g in spec.capacity_groups],
        "ci_scale": spec.ci_scale,
        "estimate_scale": spec.estimate_scale,
        "ci_attributes": attrs,
        "ws_terms": [
            {"column": t.column, "alternatives": None if t.alternatives is None else list(t.alternatives), "generic": t.generic}
            for t in spec.ws_terms
        ],
    }


def parse_error(data, n_alternatives: int, location: str = "error") -> ErrorStructure:
    sec = _Section(data, location)
    kind = sec.get("kind", str, "iid")
    if kind not in {k.value for k in ErrorKind}:
        raise ConfigError(f"unknown error kind {kind!r} ({', '.join(k.value for k in ErrorKind)})", sec.loc("kind"))
    param = sec.get("parameterization", str, CholeskyMap.FREE.value)
    if param not in {m.value for m in CholeskyMap}:
        raise ConfigError(f"unknown parameterization {param!r}", sec.loc("parameterization"))
    params = sec.get("params", list, [])
    err = _wrap(sec.loc("params"), ErrorStructure, kind, n_alternatives, tuple(params), param)
    sec.finish()
    return err


def error_to_dict(err: ErrorStructure) -> dict:
    return {"kind": err.kind.value, "parameterization": err.parameterization.value, "params": list(err.free_params)}


def parse_optimizer(data, location: str = "optimizer") -> OptimizerConfig:
    sec = _Section(data, location)
    d = OptimizerConfig()
    plan = _wrap(
        location,
        HaltonPlan,
        sec.get("draws", int, d.draws.n_draws),
        sec.get("skip", int, d.draws.skip),
        sec.get("per_observation_offset", int, d.draws.per_observation_offset),
    )
    cfg = _wrap(
        location,
        OptimizerConfig,
        max_iterations=sec.get("max_iterations", int, d.max_iterations),
        objective_tol=sec.get("objective_tol", float, d.objective_tol),
        feasibility_tol=sec.get("feasibility_tol", float, d.feasibility_tol),
        fd_step=sec.get("fd_step", float, d.fd_step),
        hessian_step=sec.get("hessian_step", float, d.hessian_step),
        kkt_tol=sec.get("kkt_tol", float, d.kkt_tol),
        active_tol=sec.get("active_tol", float, d.active_tol),
        draws=plan,
        threads=sec.get("threads", int, d.threads),
        compute_standard_errors=sec.get("compute_standard_errors", bool, d.compute_standard_errors),
    )
    sec.finish()
    return cfg


def optimizer_to_dict(cfg: OptimizerConfig) -> dict:
    return {
        "max_iterations": cfg.max_iterations,
        "objective_tol": cfg.objective_tol,
        "feasibility_tol": cfg.feasibility_tol,
        "fd_step": cfg.fd_step,
        "hessian_step": cfg.hessian_step,
        "kkt_tol": cfg.kkt_tol,
        "active_tol": cfg.active_tol,
        "draws": cfg.draws.n_draws,
        "skip": cfg.draws.skip,
        "per_observation_offset": cfg.draws.per_observation_offset,
        "threads": cfg.threads,
        "compute_standard_errors": cfg.compute_standard_errors,
    }


def parse_simulation(data, location: str = "simulation") -> tuple[DgpConfig, int]:
    sec = _Section(data, location)
    design = sec.get("design", str, "CI-IID")
    overrides = {}
    for key, kind in (
        ("n_individuals", int),
        ("n_tasks", int),
        ("replications", int),
        ("seed", int),
        ("utility", str),
        ("fit", str),
        ("name", str),
    ):
        value = sec.get(key, kind)
        if value is not None:
            overrides[key] = value
    changes = sec.get("marginal_effect_changes", list)
    if changes is not None:
        if not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in changes):
            raise ConfigError("expected a list of numbers", sec.loc("marginal_effect_changes"))
        overrides["marginal_effect_changes"] = tuple(float(c) for c in changes)
    replication = sec.get("replication", int, 0)
    cfg = _wrap(location, design_dgp, design, sec.get("n_attributes", int, 4), **overrides)
    sec.finish()
    return cfg, replication


def parse_config(data: Any) -> RunConfig:
    root = _Section(data, "")
    for key in root.data:
        if key not in SECTIONS:
            raise ConfigError(f"unknown section (expected one of {', '.join(SECTIONS)})", str(key))
    data_sec = root.sub("data")
    data_path = data_sec.get("path", str)
    data_sec.finish()
    out_sec = root.sub("output")
    out_dir = out_sec.get("dir", str, "out")
    out_sec.finish()
    root.used.add("model")
    spec = parse_spec(root.data["model"]) if root.has("model") else None
    dgp, replication = (None, 0)
    root.used.add("simulation")
    if root.has("simulation"):
        dgp, replication = parse_simulation(root.data["simulation"])
    n_alt = spec.n_alternatives if spec is not None else (dgp.n_alternatives if dgp is not None else None)
    error = None
    root.used.add("error")
    if n_alt is not None:
        error = parse_error(root.data.get("error"), n_alt)
    elif root.has("error"):
        raise ConfigError("an error section needs a model or simulation section", "error")
    root.used.add("optimizer")
    optimizer = parse_optimizer(root.data.get("optimizer"))
    an = root.sub("analyze")
    result_path = an.get("result", str)
    requests = []
    for item, loc in an.items("marginal_effects"):
        m = _Section(item, loc)
        alts = m.get("alternatives", list)
        requests.append(
            MarginalEffectRequest(
                m.get("attribute", str, required=True),
                m.get("pct_change", float, required=True),
                None if alts is None else _int_tuple(alts, m.loc("alternatives")),
            )
        )
        m.finish()
    an.finish()
    root.finish()
    return RunConfig(data_path, out_dir, spec, error, optimizer, dgp, replication, result_path, tuple(requests), data)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else str(path)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", where) from None
    return parse_config(data)


def template(n_alternatives: int = 5) -> str:
    """Annotated config with every default spelled out."""
    opt = optimizer_to_dict(OptimizerConfig())
    d = DgpConfig.__dataclass_fields__
    shapes = ", ".join(SHAPES)
    lines = [
        "# Run configuration. Sections not needed by a subcommand are ignored.",
        "data:",
        "  path: data.csv            # long-format CSV (estimate, analyze)",
        "output:",
        "  dir: out",
        "model:",
        f"  n_alternatives: {n_alternatives}",
        "  aggregation: choquet      # choquet | weighted_sum",
        "  asc: true                 # constants for alternatives 2..I",
        "  capacity_groups: null     # null = one generic capacity over all alternatives",
        "  ci_scale: 1.0",
        "  estimate_scale: false",
        "  ci_attributes:",
    ]
    for k in range(1, 5):
        lines += [
            f"    - name: x{k}",
            f"      column: x{k}",
            "      normalization:",
            f"        type: minmax         # minmax | membership | cutoff ({shapes})",
            f"        direction: {Direction.POSITIVE.value}",
            "      alternative_overrides: []",
        ]
    lines += [
        "  ws_terms: []              # e.g. [{column: cost, alternatives: [2, 3], generic: true}]",
        "error:",
        "  kind: iid                 # iid | diagonal | full",
        f"  parameterization: {CholeskyMap.FREE.value}   # {' | '.join(m.value for m in CholeskyMap)}",
        "  params: []                # starting values; empty = iid-equivalent",
        "optimizer:",
    ]
    lines += [f"  {k}: {str(v).lower() if isinstance(v, bool) else v}" for k, v in opt.items()]
    lines += [
        "simulation:",
        "  design: CI-IID            # CI-IID | CIC-IID | CIC-DE | CIC-FE",
        "  n_attributes: 4           # 4 | 6",
        f"  n_individuals: {d['n_individuals'].default}",
        f"  n_tasks: {d['n_tasks'].default}",
        f"  replications: {d['replications'].default}",
        f"  seed: {d['seed'].default}",
        "  replication: 0            # dataset written by simulate",
        "  utility: choquet          # true aggregation",
        "  fit: choquet              # aggregation estimated by montecarlo",
        "  marginal_effect_changes: []",
        "analyze:",
        "  result: out/result.json",
        "  marginal_effects: []      # e.g. [{attribute: x1, pct_change: -0.25, alternatives: [1]}]",
    ]
    return "\n".join(lines) + "\n"
