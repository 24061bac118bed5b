"""``choquet-probit`` command line: init, simulate, estimate, analyze, montecarlo.

Numeric outputs are written with a fixed key order and no timing data, so
reruns with the same inputs produce identical files; timestamps go to
``metadata.json``.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .choquet import MissingColumnError, SpecError
from .config import (
    ConfigError,
    RunConfig,
    error_to_dict,
    load_config,
    optimizer_to_dict,
    parse_error,
    parse_spec,
    spec_to_dict,
    template,
)
from .data import DataError, export_csv, ingest_csv
from .estimator import EstimationResult, PackingMap, derived_tables, estimate
from .simulation import design_dgp, generate_dataset, marginal_effects, run_monte_carlo

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ITERATION_LIMIT = 3
EXIT_DATA = 4
EXIT_CONFIG = 5
EXIT_ESTIMATION = 6

THREADS_ENV = "CHOQUET_PROBIT_THREADS"


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n", encoding="utf-8")


def write_metadata(out: Path, command: str, started: float, argv: list[str]) -> None:
    def stamp(t):
        return dt.datetime.fromtimestamp(t, dt.timezone.utc).isoformat(timespec="seconds")

    finished = time.time()
    write_json(
        out / "metadata.json",
        {
            "command": command,
            "argv": argv,
            "started": stamp(started),
            "finished": stamp(finished),
            "elapsed_seconds": round(finished - started, 3),
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    )


def _threads(args, cfg: RunConfig) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"must be an integer, got {env!r}", THREADS_ENV) from None
        if n < 1:
            raise ConfigError("must be at least 1", THREADS_ENV)
        return n
    return cfg.optimizer.threads


def resolve(args) -> RunConfig:
    """Load the config file (if any) and apply command-line overrides."""
    cfg = load_config(args.config) if args.config else RunConfig()
    opt = cfg.optimizer
    if args.draws is not None:
        if args.draws < 1:
            raise ConfigError("must be at least 1", "--draws")
        opt = dataclasses.replace(opt, draws=dataclasses.replace(opt.draws, n_draws=args.draws))
    threads = _threads(args, cfg)
    if threads < 1:
        raise ConfigError("must be at least 1", "--threads")
    opt = dataclasses.replace(opt, threads=threads)
    changes = {"optimizer": opt}
    if args.out is not None:
        changes["out_dir"] = args.out
    if getattr(args, "data", None) is not None:
        changes["data_path"] = args.data
    dgp = cfg.dgp
    if args.command in ("simulate", "montecarlo"):
        dgp = dgp or design_dgp()
        if args.seed is not None:
            dgp = dgp.replace(seed=args.seed)
        if getattr(args, "full_scale", False):
            dgp = dgp.scaled(True)
        changes["dgp"] = dgp
    return dataclasses.replace(cfg, **changes)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_init(args) -> int:
    path = Path(args.config or "config.yaml")
    if path.exists() and not args.force:
        print(f"error: {path} exists (use --force to overwrite)", file=sys.stderr)
        return EXIT_CONFIG
    path.write_text(template(), encoding="utf-8")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    dgp = cfg.dgp
    out = _out_dir(cfg)
    ds, truth = generate_dataset(dgp, cfg.replication)
    export_csv(ds, out / "dataset.csv")
    spec = dgp.estimation_spec()
    err = dgp.error_structure()
    payload = {
        "design": dgp.name,
        "replication": cfg.replication,
        "seed": dgp.seed,
        "n_rows": ds.n_tasks * ds.n_alternatives,
        "model": spec_to_dict(spec),
        "error": error_to_dict(err),
        "parameters": None,
        "capacity_groups": [],
    }
    if truth is not None:
        pmap = PackingMap(spec, err)
        payload["parameters"] = [{"name": n, "value": v} for n, v in zip(pmap.names, truth)]
        payload["capacity_groups"] = derived_tables(pmap, truth) if spec.aggregation == "choquet" else []
    write_json(out / "truth.json", payload)
    print(f"wrote {out / 'dataset.csv'} ({payload['n_rows']} rows) and {out / 'truth.json'}")
    return EXIT_OK


def _load_dataset(cfg: RunConfig):
    if cfg.data_path is None:
        raise ConfigError("no dataset given (use --data or data.path)", "data.path")
    return ingest_csv(cfg.data_path)


def cmd_estimate(cfg: RunConfig) -> int:
    if cfg.spec is None:
        raise ConfigError("estimate needs a model section", "model")
    ds = _load_dataset(cfg)
    cols, demo = cfg.spec.referenced_columns()
    ds.check_complete(cols, demo)
    res = estimate(ds, cfg.spec, cfg.error, cfg.optimizer)
    out = _out_dir(cfg)
    payload = {
        "model": spec_to_dict(cfg.spec),
        "error": error_to_dict(cfg.error),
        "optimizer": optimizer_to_dict(cfg.optimizer),
        "data": {"path": Path(cfg.data_path).name, "n_tasks": ds.n_tasks, "n_individuals": ds.n_individuals},
    }
    payload.update(res.to_dict())
    write_json(out / "result.json", payload)
    (out / "report.txt").write_text(res.summary(), encoding="utf-8")
    print(f"{res.status}: loglik {res.loglik:.4f}, AIC {res.aic():.4f}; wrote {out / 'result.json'}")
    return {"converged": EXIT_OK, "iteration_limit": EXIT_ITERATION_LIMIT}.get(res.status, EXIT_ESTIMATION)


def load_result(path) -> tuple[PackingMap, np.ndarray, dict]:
    """Packing map, parameter vector and raw payload of a saved result."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read result: {exc.strerror}", str(path)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}", str(path)) from None
    for key in ("model", "error", "parameters"):
        if key not in payload:
            raise ConfigError(f"result lacks the {key!r} entry", str(path))
    spec = parse_spec(payload["model"], f"{path}:model")
    err = parse_error(payload["error"], spec.n_alternatives, f"{path}:error")
    pmap = PackingMap(spec, err)
    names = [p["name"] for p in payload["parameters"]]
    if tuple(names) != pmap.names:
        raise ConfigError("parameter names do not match the saved model", f"{path}:parameters")
    theta = np.array([p["estimate"] for p in payload["parameters"]], dtype=float)
    return pmap, theta, payload


def cmd_analyze(cfg: RunConfig) -> int:
    path = cfg.result_path or str(Path(cfg.out_dir) / "result.json")
    pmap, theta, payload = load_result(path)
    tables = derived_tables(pmap, theta) if pmap.spec.aggregation == "choquet" else []
    lines = [f"analysis of {Path(path).name}"]
    for grp in tables:
        total = sum(grp["shapley"].values())
        lines += ["", f"capacity group {grp['group']} (alternatives {grp['alternatives']})"]
        lines.append("shapley: " + ", ".join(f"{a}={v:.4f}" for a, v in grp["shapley"].items()) + f" (sum {total:.4f})")
        lines.append("interactions: " + ", ".join(f"({p})={v:.4f}" for p, v in grp["interactions"].items()))
    effects = []
    if cfg.marginal_effects:
        ds = _load_dataset(cfg)
        for req in cfg.marginal_effects:
            me = marginal_effects(pmap, theta, ds, req.attribute, req.pct_change, req.alternatives, cfg.optimizer.draws)
            effects.append(
                {
                    "attribute": req.attribute,
                    "pct_change": req.pct_change,
                    "alternatives": None if req.alternatives is None else list(req.alternatives),
                    "quantile_levels": list(me.quantile_levels),
                    "by_alternative": [
                        {"alternative": j + 1, "mean": me.mean[j], "std": me.std[j], "quantiles": me.quantiles[j]}
                        for j in range(me.mean.size)
                    ],
                }
            )
            lines += ["", f"marginal effect of {req.pct_change:+.0%} in {req.attribute}"]
            for j in range(me.mean.size):
                lines.append(f"  alternative {j + 1}: mean {me.mean[j]:+.5f}, sd {me.std[j]:.5f}")
    out = _out_dir(cfg)
    write_json(out / "analysis.json", {"result": Path(path).name, "capacity_groups": tables, "marginal_effects": effects})
    (out / "analysis.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out / 'analysis.json'}")
    return EXIT_OK


def cmd_montecarlo(cfg: RunConfig) -> int:
    dgp = cfg.dgp
    out = _out_dir(cfg)

    def progress(rep, res: EstimationResult):
        print(f"replication {rep + 1}/{dgp.replications}: {res.status}, loglik {res.loglik:.4f}", flush=True)

    report = run_monte_carlo(dgp, cfg.optimizer, progress)
    payload = {"design": dgp.name, "seed": dgp.seed, "n_individuals": dgp.n_individuals}
    payload.update(report.to_dict())
    write_json(out / "montecarlo.json", payload)
    (out / "montecarlo.txt").write_text(report.to_text(), encoding="utf-8")
    print(f"wrote {out / 'montecarlo.json'}")
    return EXIT_OK if report.n_completed else EXIT_ESTIMATION


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "analyze": cmd_analyze,
    "montecarlo": cmd_montecarlo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="choquet-probit", description="Choquet-integral multinomial probit models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    init = sub.add_parser("init", help="write a config template with every default")
    init.add_argument("--config", help="template path (default config.yaml)")
    init.add_argument("--force", action="store_true", help="overwrite an existing file")
    for name, helptext in (
        ("simulate", "generate a synthetic dataset and its truth"),
        ("estimate", "fit a model to a long-format CSV"),
        ("analyze", "recompute Shapley, interaction and marginal-effect tables from a result"),
        ("montecarlo", "run a parameter-recovery study"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--draws", type=int, help="Halton draws per observation")
        p.add_argument("--seed", type=int, help="simulation seed")
        p.add_argument("--threads", type=int, help=f"worker threads (fallback: ${THREADS_ENV})")
        if name in ("estimate", "analyze"):
            p.add_argument("--data", help="long-format CSV")
        if name == "montecarlo":
            p.add_argument("--full-scale", action="store_true", help="50 replications of 3000 individuals")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    if args.command == "init":
        return cmd_init(args)
    started = time.time()
    try:
        cfg = resolve(args)
        code = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingColumnError as exc:
        print(f"data error: missing column {exc.column!r}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SpecError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_metadata(Path(cfg.out_dir), args.command, started, argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
