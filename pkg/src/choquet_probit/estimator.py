"""Constrained maximum simulated likelihood.

The free parameters are packed in the fixed order

    Möbius values per capacity group | cut-off coefficients | ASCs and
    linear coefficients | error parameters | log Choquet scale

Capacity constraints are linear in the Möbius values, so the SQP solver
sees linear equality/inequality rows and a nonlinear objective only.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import linalg, optimize

from .choquet import CutoffRule, ModelParameters, UtilityModel, UtilitySpec
from .data import ChoiceDataset, DataError
from .fuzzy_measures import (
    Capacity,
    build_constraints,
    pair_labels,
    pairwise_interactions,
    shapley,
    subset_label,
    zeta,
)
from .membership import SHAPES, points_to_log_gaps
from .mnp import (
    PROBABILITY_FLOOR,
    ErrorStructure,
    HaltonPlan,
    _observation_draws,
    differencing_matrix,
    ghk_batch,
)

# objective value (per observation) used when a trial point has no valid covariance
_PENALTY = 1e3


def aic(loglik: float, k: int) -> float:
    return 2.0 * k - 2.0 * loglik


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 200
    objective_tol: float = 1e-9
    feasibility_tol: float = 1e-8
    fd_step: float = 1e-4
    hessian_step: float = 1e-3
    kkt_tol: float = 1e-4
    active_tol: float = 1e-6
    draws: HaltonPlan = HaltonPlan()
    threads: int = 1
    compute_standard_errors: bool = True

    def __post_init__(self):
        for name in ("objective_tol", "feasibility_tol", "fd_step", "hessian_step", "kkt_tol", "active_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iterations < 1 or self.threads < 1:
            raise ValueError("max_iterations and threads must be at least 1")


@dataclass(frozen=True)
class Segment:
    name: str
    start: int
    stop: int

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


class PackingMap:
    """Bijection between the flat parameter vector and structured parameters."""

    def __init__(self, spec: UtilitySpec, error: ErrorStructure):
        if error.n_alternatives != spec.n_alternatives:
            raise ValueError("error structure and utility spec disagree on the number of alternatives")
        self.spec = spec
        self.error = error
        g = spec.n_attributes
        names: list[str] = []
        segments: list[Segment] = []

        def add(seg_name, seg_names):
            segments.append(Segment(seg_name, len(names), len(names) + len(seg_names)))
            names.extend(seg_names)

        self.group_labels = [",".join(map(str, grp)) for grp in spec.capacity_groups]
        for k, _ in enumerate(spec.capacity_groups):
            if spec.aggregation == "choquet":
                add(f"mobius[{k + 1}]", [f"mobius[{k + 1}]:{subset_label(b)}" for b in range(1, 1 << g)])
            else:
                add(f"weight[{k + 1}]", [f"weight[{k + 1}]:{a.name}" for a in spec.ci_attributes])
        self.cutoff_rules = spec.cutoff_rules()
        for key, _, rule, _ in self.cutoff_rules:
            add(f"cutoff[{key}]", [f"cutoff[{key}]:{n}" for n in rule.coefficient_names()])
        add("beta", spec.beta_names())
        add("error", [f"error:{n}" for n in error.param_names()])
        if spec.estimate_scale:
            add("log_ci_scale", ["log_ci_scale"])
        self.names = tuple(names)
        self.segments = {s.name: s for s in segments}
        self._constraints = None

    @property
    def n_params(self) -> int:
        return len(self.names)

    def segment(self, name: str) -> slice:
        return self.segments[name].slice

    def group_segment(self, k: int) -> slice:
        prefix = "mobius" if self.spec.aggregation == "choquet" else "weight"
        return self.segment(f"{prefix}[{k + 1}]")

    def pack(self, params: ModelParameters, error: ErrorStructure) -> np.ndarray:
        theta = np.zeros(self.n_params)
        for k in range(len(self.spec.capacity_groups)):
            theta[self.group_segment(k)] = params.group_values[k]
        for key, *_ in self.cutoff_rules:
            theta[self.segment(f"cutoff[{key}]")] = params.cutoffs[key]
        beta_names = self.spec.beta_names()
        theta[self.segment("beta")] = [params.betas[n] for n in beta_names]
        theta[self.segment("error")] = error.free_params
        if self.spec.estimate_scale:
            theta[self.segment("log_ci_scale")] = math.log(params.ci_scale)
        return theta

    def unpack(self, theta) -> tuple[ModelParameters, ErrorStructure]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        groups = tuple(theta[self.group_segment(k)].copy() for k in range(len(self.spec.capacity_groups)))
        cutoffs = {key: theta[self.segment(f"cutoff[{key}]")].copy() for key, *_ in self.cutoff_rules}
        betas = dict(zip(self.spec.beta_names(), theta[self.segment("beta")].tolist()))
        err = self.error.with_params(theta[self.segment("error")])
        scale = math.exp(theta[self.segment("log_ci_scale")][0]) if self.spec.estimate_scale else self.spec.ci_scale
        return ModelParameters(groups, cutoffs, betas, scale), err

    def constraint_matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
        """``(A_eq, b_eq, A_in, labels)`` with ``A_eq theta = b_eq`` and ``A_in theta >= 0``."""
        if self._constraints is None:
            self._constraints = self._build_constraint_matrices()
        return self._constraints

    def _build_constraint_matrices(self):
        n = self.n_params
        if self.spec.aggregation != "choquet" or not self.spec.capacity_groups:
            return np.zeros((0, n)), np.zeros(0), np.zeros((0, n)), []
        cs = build_constraints(self.spec.n_attributes)
        eq_rows, in_rows, labels = [], [], []
        dense = cs.inequalities.toarray()
        for k in range(len(self.spec.capacity_groups)):
            sl = self.group_segment(k)
            row = np.zeros(n)
            row[sl] = cs.equality
            eq_rows.append(row)
            block = np.zeros((dense.shape[0], n))
            block[:, sl] = dense
            in_rows.append(block)
            labels.extend(f"group {k + 1}: {cs.row_label(r)}" for r in range(cs.n_inequalities))
        return np.array(eq_rows), np.ones(len(eq_rows)), np.vstack(in_rows), labels

    def max_violation(self, theta) -> float:
        a_eq, b_eq, a_in, _ = self.constraint_matrices()
        worst = float(np.max(np.abs(a_eq @ theta - b_eq))) if a_eq.size else 0.0
        if a_in.size:
            worst = max(worst, float(-np.min(a_in @ theta)))
        return worst

    def capacities(self, theta) -> list[Capacity]:
        if self.spec.aggregation != "choquet":
            return []
        g = self.spec.n_attributes
        out = []
        for k in range(len(self.spec.capacity_groups)):
            m = np.concatenate([[0.0], np.asarray(theta, dtype=float)[self.group_segment(k)]])
            out.append(Capacity(g, zeta(m, g)))
        return out


def _quantile_points(values: np.ndarray, shape: str) -> np.ndarray:
    qs = (0.1, 0.9) if SHAPES[shape][1] == 2 else (0.1, 0.4, 0.6, 0.9)
    pts = np.quantile(values, qs) if values.size else np.array(qs) * 10
    span = max(float(pts[-1] - pts[0]), 1e-3 * max(abs(float(pts[-1])), 1.0))
    eps = 1e-3 * span
    pts[0] = max(pts[0], eps)
    for k in range(1, len(pts)):
        pts[k] = max(pts[k], pts[k - 1] + eps)
    return pts


def feasible_start(spec: UtilitySpec, error: ErrorStructure, dataset: ChoiceDataset | None = None) -> np.ndarray:
    """Strictly feasible starting vector.

    Möbius values start at the uniform additive capacity, cut-offs at
    empirical quantiles of the governed raw values, coefficients at zero and
    the error structure at its iid values.
    """
    pmap = PackingMap(spec, error)
    g = spec.n_attributes
    groups = []
    for _ in spec.capacity_groups:
        if spec.aggregation == "choquet":
            vals = np.zeros((1 << g) - 1)
            for i in range(g):
                vals[(1 << i) - 1] = 1.0 / g
        else:
            vals = np.zeros(g)
        groups.append(vals)
    cutoffs = {}
    for key, attr, rule, alts in pmap.cutoff_rules:
        if dataset is not None:
            col = dataset.column(attr.column)[:, np.array(alts) - 1]
            mask = dataset.available[:, np.array(alts) - 1] & np.isfinite(col)
            raw = col[mask]
        else:
            raw = np.zeros(0)
        gaps = points_to_log_gaps(_quantile_points(raw, rule.shape))
        coefs = []
        for k, covs in enumerate(rule.covariates):
            coefs.extend([gaps[k]] + [0.0] * len(covs))
        cutoffs[key] = np.array(coefs)
    betas = {n: 0.0 for n in spec.beta_names()}
    params = ModelParameters(tuple(groups), cutoffs, betas, spec.ci_scale)
    return pmap.pack(params, error.with_params(()))


class LikelihoodEvaluator:
    """Simulated log-likelihood with fixed draws and a fixed summation order."""

    def __init__(self, pmap: PackingMap, dataset: ChoiceDataset, plan: HaltonPlan = HaltonPlan(), threads: int = 1):
        spec = pmap.spec
        cols, demo = spec.referenced_columns()
        dataset.check_complete(cols, demo)
        self.pmap = pmap
        self.dataset = dataset
        self.plan = plan
        self.threads = threads
        self.model = UtilityModel(
            spec, {c: dataset.column(c) for c in cols}, dataset.available, dataset.demographics(demo)
        )
        keys: dict[tuple, list[int]] = {}
        for t in range(dataset.n_tasks):
            keys.setdefault((dataset.available[t].tobytes(), int(dataset.chosen[t])), []).append(t)
        self.groups = []
        for (avail_bytes, chosen), tasks in sorted(keys.items()):
            avail = np.frombuffer(avail_bytes, dtype=bool)
            idx = np.flatnonzero(avail)
            pos = int(np.searchsorted(idx, chosen - 1)) + 1
            m = differencing_matrix(idx.size, pos).astype(float)
            tasks = np.array(tasks)
            d = idx.size - 1
            draws = _observation_draws(plan, max(d - 1, 0), tasks.size) if plan.per_observation_offset == 0 else None
            if draws is None:
                draws = np.stack([_observation_draws(plan, max(d - 1, 0), 1, int(t))[0] for t in tasks])
            self.groups.append((tasks, idx, m, draws))
        self.n_evaluations = 0
        self.spd_failures = 0

    def _group_logprob(self, v: np.ndarray, lam: np.ndarray, group) -> np.ndarray:
        tasks, idx, m, draws = group
        if idx.size == 1:
            return np.zeros(tasks.size)
        upper = -(v[np.ix_(tasks, idx)] @ m.T)
        cov = m @ lam[np.ix_(idx, idx)] @ m.T
        chol = np.linalg.cholesky(cov)
        p = ghk_batch(upper, chol, draws)
        return np.log(np.maximum(p, PROBABILITY_FLOOR))

    def _logprob(self, v: np.ndarray, lam: np.ndarray) -> np.ndarray:
        out = np.empty(self.dataset.n_tasks)
        self.n_evaluations += 1
        if self.threads > 1 and len(self.groups) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                parts = list(pool.map(lambda grp: self._group_logprob(v, lam, grp), self.groups))
        else:
            parts = [self._group_logprob(v, lam, grp) for grp in self.groups]
        for grp, lp in zip(self.groups, parts):
            out[grp[0]] = lp
        return out

    def task_logprob(self, theta) -> np.ndarray:
        """Log choice probability per task, in dataset order."""
        params, err = self.pmap.unpack(theta)
        return self._logprob(self.model.utilities(params), err.full_cov())

    def loglik(self, theta) -> float:
        try:
            return float(np.sum(self.task_logprob(theta)))
        except np.linalg.LinAlgError:
            self.spd_failures += 1
            return -math.inf

    def gradient(self, theta, step: float) -> np.ndarray:
        """Central-difference gradient of the log-likelihood.

        Utility parameters go through the chain rule: the log-probabilities
        are differenced in each utility column once, and the utilities are
        differenced in each parameter (no simulation needed).  Error
        parameters are differenced directly.
        """
        theta = np.asarray(theta, dtype=float)
        params, err = self.pmap.unpack(theta)
        v = self.model.utilities(params)
        lam = err.full_cov()
        dlogp = np.empty_like(v)
        for j in range(v.shape[1]):
            e = np.zeros_like(v)
            e[:, j] = step
            dlogp[:, j] = (self._logprob(v + e, lam) - self._logprob(v - e, lam)) / (2 * step)
        error_seg = self.pmap.segments["error"]
        grad = np.empty(theta.size)
        for k in range(theta.size):
            h = step * max(1.0, abs(theta[k]))
            up, down = theta.copy(), theta.copy()
            up[k] += h
            down[k] -= h
            if error_seg.start <= k < error_seg.stop:
                grad[k] = (self.loglik(up) - self.loglik(down)) / (2 * h)
            else:
                dv = self.model.utilities(self.pmap.unpack(up)[0]) - self.model.utilities(self.pmap.unpack(down)[0])
                grad[k] = np.sum(dlogp * dv) / (2 * h)
        return grad


def numerical_gradient(f, x: np.ndarray, step: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        h = step * max(1.0, abs(x[k]))
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def numerical_hessian(f, x: np.ndarray, step: float) -> np.ndarray:
    """Central second differences; ``4`` evaluations per off-diagonal pair."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = step * np.maximum(1.0, np.abs(x))
    f0 = f(x)
    hess = np.empty((n, n))
    unit = np.eye(n)
    for i in range(n):
        ei = unit[i] * h[i]
        hess[i, i] = (f(x + 2 * ei) - 2 * f0 + f(x - 2 * ei)) / (4 * h[i] ** 2)
    for i, j in combinations(range(n), 2):
        ei, ej = unit[i] * h[i], unit[j] * h[j]
        val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
        hess[i, j] = hess[j, i] = val
    return hess


def hessian_from_gradient(grad, x: np.ndarray, step: float) -> np.ndarray:
    """Symmetrised central differences of a gradient function."""
    x = np.asarray(x, dtype=float)
    n = x.size
    hess = np.empty((n, n))
    for k in range(n):
        h = step * max(1.0, abs(x[k]))
        e = np.zeros(n)
        e[k] = h
        hess[:, k] = (grad(x + e) - grad(x - e)) / (2 * h)
    return 0.5 * (hess + hess.T)


def kkt_residual(grad: np.ndarray, a_eq: np.ndarray, a_act: np.ndarray) -> float:
    """Sup-norm of ``grad - A_eq' l - A_act' v`` minimised over ``l`` and ``v >= 0``."""
    rows = np.vstack([a_eq, a_act]) if (a_eq.size or a_act.size) else np.zeros((0, grad.size))
    if rows.shape[0] == 0:
        return float(np.max(np.abs(grad))) if grad.size else 0.0
    lb = np.concatenate([np.full(a_eq.shape[0], -np.inf), np.zeros(a_act.shape[0])])
    sol = optimize.lsq_linear(rows.T, grad, bounds=(lb, np.full(rows.shape[0], np.inf)))
    return float(np.max(np.abs(rows.T @ sol.x - grad)))


def project_feasible(theta: np.ndarray, a_eq, b_eq, a_in) -> np.ndarray:
    """Closest point (Euclidean) satisfying the linear constraints."""
    res = optimize.minimize(
        lambda x: 0.5 * np.sum((x - theta) ** 2),
        theta,
        jac=lambda x: x - theta,
        method="SLSQP",
        constraints=[
            {"type": "eq", "fun": lambda x: a_eq @ x - b_eq, "jac": lambda x: a_eq},
            {"type": "ineq", "fun": lambda x: a_in @ x, "jac": lambda x: a_in},
        ],
        options={"ftol": 1e-15, "maxiter": 500},
    )
    return res.x


@dataclass
class EstimationResult:
    """Estimates, inference and convergence diagnostics of one fit."""

    names: tuple[str, ...]
    theta: np.ndarray
    loglik: float
    n_obs: int
    std_errors: np.ndarray
    se_flagged: np.ndarray
    se_status: str
    n_iterations: int
    status: str
    message: str
    active_constraints: tuple[str, ...]
    kkt_residual: float
    max_violation: float
    start_loglik: float
    loglik_trace: tuple[float, ...]
    pmap: PackingMap | None = field(default=None, repr=False, compare=False)

    @property
    def n_params(self) -> int:
        return len(self.names)

    def aic(self) -> float:
        return aic(self.loglik, self.n_params)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def t_stats(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.theta / self.std_errors

    def parameter(self, name: str) -> float:
        return float(self.theta[self.names.index(name)])

    def derived(self) -> list[dict]:
        return derived_tables(self.pmap, self.theta) if self.pmap is not None else []

    def to_dict(self) -> dict:
        t = self.t_stats()
        params = [
            {
                "name": n,
                "estimate": float(v),
                "std_error": None if not np.isfinite(s) else float(s),
                "t_stat": None if not np.isfinite(ts) else float(ts),
                "boundary": bool(fl),
            }
            for n, v, s, ts, fl in zip(self.names, self.theta, self.std_errors, t, self.se_flagged)
        ]
        return {
            "parameters": params,
            "capacity_groups": self.derived(),
            "loglik": float(self.loglik),
            "aic": float(self.aic()),
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "convergence": {
                "status": self.status,
                "message": self.message,
                "n_iterations": self.n_iterations,
                "kkt_residual": float(self.kkt_residual),
                "max_constraint_violation": float(self.max_violation),
                "start_loglik": float(self.start_loglik),
                "loglik_trace": [float(x) for x in self.loglik_trace],
                "active_constraints": list(self.active_constraints),
                "standard_errors": self.se_status,
            },
        }

    def summary(self) -> str:
        lines = [
            f"status: {self.status} ({self.message})",
            f"iterations: {self.n_iterations}",
            f"observations: {self.n_obs}",
            f"log-likelihood: {self.loglik:.4f}",
            f"parameters: {self.n_params}",
            f"AIC: {self.aic():.4f}",
            "",
            f"{'parameter':<36}{'estimate':>12}{'std.err':>12}{'t':>9}",
        ]
        for n, v, s, ts, fl in zip(self.names, self.theta, self.std_errors, self.t_stats(), self.se_flagged):
            se = "boundary" if fl else ("n/a" if not np.isfinite(s) else f"{s:.4f}")
            tt = "" if not np.isfinite(ts) else f"{ts:.2f}"
            lines.append(f"{n:<36}{v:>12.4f}{se:>12}{tt:>9}")
        for grp in self.derived():
            lines += ["", f"capacity group {grp['group']} (alternatives {grp['alternatives']})"]
            lines.append(f"{'subset':<12}{'capacity':>10}{'mobius':>10}")
            for lab in grp["capacity"]:
                if lab:
                    lines.append(f"{'{' + lab + '}':<12}{grp['capacity'][lab]:>10.4f}{grp['mobius'][lab]:>10.4f}")
            lines.append("shapley: " + ", ".join(f"{a}={v:.4f}" for a, v in grp["shapley"].items()))
            lines.append("interactions: " + ", ".join(f"({p})={v:.4f}" for p, v in grp["interactions"].items()))
        if self.active_constraints:
            lines += ["", "active constraints:"] + [f"  {c}" for c in self.active_constraints]
        return "\n".join(lines) + "\n"


def derived_tables(pmap: PackingMap, theta) -> list[dict]:
    """Capacity, Möbius, Shapley and pairwise interaction tables per group."""
    spec = pmap.spec
    names = [a.name for a in spec.ci_attributes]
    out = []
    for k, mu in enumerate(pmap.capacities(theta)):
        m = np.concatenate([[0.0], np.asarray(theta, dtype=float)[pmap.group_segment(k)]])
        s = shapley(mu)
        out.append(
            {
                "group": k + 1,
                "alternatives": pmap.group_labels[k],
                "attributes": names,
                "capacity": mu.to_dict(),
                "mobius": {subset_label(b): float(m[b]) for b in range(1 << mu.g)},
                "shapley": {n: float(v) for n, v in zip(names, s)},
                "interactions": dict(zip(pair_labels(mu.g), map(float, pairwise_interactions(mu)))),
            }
        )
    return out


def standard_errors(
    theta: np.ndarray, evaluator: LikelihoodEvaluator, config: OptimizerConfig
) -> tuple[np.ndarray, np.ndarray, str, list[int]]:
    """Asymptotic standard errors from the constrained numerical Hessian.

    The Hessian of ``-loglik`` is projected onto the null space of the
    equality and active inequality rows.  Parameters that appear in an
    active inequality are flagged and get NaN.
    Returns ``(se, flagged, status, active_rows)``.
    """
    pmap = evaluator.pmap
    a_eq, _, a_in, _ = pmap.constraint_matrices()
    slack = a_in @ theta if a_in.size else np.zeros(0)
    active = [int(r) for r in np.flatnonzero(slack < config.active_tol)]
    flagged = np.zeros(pmap.n_params, dtype=bool)
    if active:
        flagged |= np.any(a_in[active] != 0, axis=0)
    hess = hessian_from_gradient(lambda x: -evaluator.gradient(x, config.fd_step), theta, config.hessian_step)
    if not np.all(np.isfinite(hess)):
        return np.full(pmap.n_params, np.nan), np.ones(pmap.n_params, dtype=bool), "singular", active
    rows = np.vstack([a_eq, a_in[active]]) if active else a_eq
    z = linalg.null_space(rows) if rows.shape[0] else np.eye(pmap.n_params)
    reduced = z.T @ hess @ z
    reduced = 0.5 * (reduced + reduced.T)
    se = np.full(pmap.n_params, np.nan)
    if not np.all(np.isfinite(reduced)) or np.min(np.linalg.eigvalsh(reduced)) <= 0:
        return se, np.ones(pmap.n_params, dtype=bool), "singular", active
    cov = z @ np.linalg.inv(reduced) @ z.T
    var = np.diag(cov).copy()
    ok = (var > 0) & ~flagged
    se[ok] = np.sqrt(var[ok])
    return se, flagged, "ok", active


def estimate(
    dataset: ChoiceDataset,
    spec: UtilitySpec,
    error: ErrorStructure,
    config: OptimizerConfig = OptimizerConfig(),
    start: np.ndarray | None = None,
) -> EstimationResult:
    """Maximise the simulated log-likelihood subject to the capacity constraints."""
    if dataset.n_alternatives != spec.n_alternatives:
        raise DataError(f"data has {dataset.n_alternatives} alternatives, model expects {spec.n_alternatives}")
    pmap = PackingMap(spec, error)
    ev = LikelihoodEvaluator(pmap, dataset, config.draws, config.threads)
    n = dataset.n_tasks
    theta0 = feasible_start(spec, error, dataset) if start is None else np.asarray(start, dtype=float)
    a_eq, b_eq, a_in, labels = pmap.constraint_matrices()
    if pmap.max_violation(theta0) > config.feasibility_tol:
        theta0 = project_feasible(theta0, a_eq, b_eq, a_in)

    cache: dict[bytes, float] = {}

    def objective(x):
        key = x.tobytes()
        if key not in cache:
            ll = ev.loglik(x)
            cache[key] = -ll / n if math.isfinite(ll) else _PENALTY
        return cache[key]

    def gradient(x):
        try:
            g = -ev.gradient(x, config.fd_step) / n
        except np.linalg.LinAlgError:
            g = None
        if g is None or not np.all(np.isfinite(g)):
            g = numerical_gradient(objective, x, config.fd_step)
        return g

    start_ll = -objective(theta0) * n
    trace = [start_ll]
    best = [theta0.copy(), start_ll]

    def callback(x):
        ll = -objective(x) * n
        if ll >= best[1] and pmap.max_violation(x) <= max(config.feasibility_tol, 1e-6):
            best[0], best[1] = x.copy(), ll
        trace.append(best[1])

    constraints = []
    if a_eq.shape[0]:
        constraints.append({"type": "eq", "fun": lambda x: a_eq @ x - b_eq, "jac": lambda x: a_eq})
    if a_in.shape[0]:
        constraints.append({"type": "ineq", "fun": lambda x: a_in @ x, "jac": lambda x: a_in})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = optimize.minimize(
            objective,
            theta0,
            jac=gradient,
            method="SLSQP",
            constraints=constraints,
            callback=callback,
            options={"maxiter": config.max_iterations, "ftol": config.objective_tol},
        )
    theta = res.x.copy()
    if pmap.max_violation(theta) > config.feasibility_tol and a_eq.shape[0]:
        theta = project_feasible(theta, a_eq, b_eq, a_in)
    ll = -objective(theta) * n
    if ll < best[1] or pmap.max_violation(theta) > config.feasibility_tol:
        theta, ll = best[0].copy(), best[1]
    trace.append(max(trace[-1], ll))

    slack = a_in @ theta if a_in.size else np.zeros(0)
    act = np.flatnonzero(slack < config.active_tol)
    kkt = kkt_residual(gradient(theta), a_eq, a_in[act] if act.size else np.zeros((0, pmap.n_params)))
    if res.status == 9:
        status = "iteration_limit"
    elif not math.isfinite(ll):
        status = "failed"
    elif res.success or kkt < config.kkt_tol:
        status = "converged"
    else:
        status = "failed"

    se = np.full(pmap.n_params, np.nan)
    flagged = np.zeros(pmap.n_params, dtype=bool)
    se_status = "not computed"
    if config.compute_standard_errors and status != "failed":
        se, flagged, se_status, _ = standard_errors(theta, ev, config)
    return EstimationResult(
        names=pmap.names,
        theta=theta,
        loglik=float(ll),
        n_obs=n,
        std_errors=se,
        se_flagged=flagged,
        se_status=se_status,
        n_iterations=int(res.nit),
        status=status,
        message=str(res.message),
        active_constraints=tuple(labels[r] for r in act),
        kkt_residual=kkt,
        max_violation=pmap.max_violation(theta),
        start_loglik=float(start_ll),
        loglik_trace=tuple(trace),
        pmap=pmap,
    )
