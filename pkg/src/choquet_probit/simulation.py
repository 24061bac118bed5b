"""Synthetic data generation, recovery metrics and the Monte Carlo harness."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .choquet import CiAttribute, CutoffRule, ModelParameters, UtilityModel, UtilitySpec
from .data import ChoiceDataset, dataset_from_arrays
from .estimator import (
    EstimationResult,
    LikelihoodEvaluator,
    OptimizerConfig,
    PackingMap,
    estimate,
)
from .fuzzy_measures import Capacity, capacity_to_mobius, pairwise_interactions, shapley
from .membership import (
    Direction,
    HalfTriangularDecreasing,
    MinMaxRange,
    Trapezoidal,
    points_to_log_gaps,
    shape_name,
)
from .mnp import ErrorKind, ErrorStructure, HaltonPlan

CRITICAL_T = 1.96

# Capacities and cut-offs of the four- and six-attribute simulation designs.
FOUR_ATTRIBUTE_CAPACITY = {
    "1": 0.3, "2": 0.25, "3": 0.2, "4": 0.1,
    "1,2": 0.58, "1,3": 0.53, "1,4": 0.44, "2,3": 0.49, "2,4": 0.36, "3,4": 0.33,
    "1,2,3": 0.79, "1,2,4": 0.68, "1,3,4": 0.64, "2,3,4": 0.59,
}
FOUR_ATTRIBUTE_BETAS = (0.3, 0.25, 0.2, 0.1)

SIX_ATTRIBUTE_CAPACITY = {
    "1": 0.17, "2": 0.18, "3": 0.20, "4": 0.16, "5": 0.19, "6": 0.18,
    "1,2": 0.33, "1,3": 0.35, "1,4": 0.31, "1,5": 0.34, "1,6": 0.33,
    "2,3": 0.36, "2,4": 0.32, "2,5": 0.35, "2,6": 0.34,
    "3,4": 0.34, "3,5": 0.37, "3,6": 0.36, "4,5": 0.33, "4,6": 0.32, "5,6": 0.35,
    "1,2,3": 0.51, "1,2,4": 0.47, "1,2,5": 0.50, "1,2,6": 0.49, "1,3,4": 0.49, "1,3,5": 0.52,
    "1,3,6": 0.51, "1,4,5": 0.48, "1,4,6": 0.47, "1,5,6": 0.50,
    "2,3,4": 0.50, "2,3,5": 0.53, "2,3,6": 0.52, "2,4,5": 0.49, "2,4,6": 0.48, "2,5,6": 0.51,
    "3,4,5": 0.51, "3,4,6": 0.50, "3,5,6": 0.53, "4,5,6": 0.49,
    "1,2,3,4": 0.65, "1,2,3,5": 0.68, "1,2,3,6": 0.67, "1,2,4,5": 0.64, "1,2,4,6": 0.63, "1,2,5,6": 0.66,
    "1,3,4,5": 0.66, "1,3,4,6": 0.65, "1,3,5,6": 0.68, "1,4,5,6": 0.64,
    "2,3,4,5": 0.67, "2,3,4,6": 0.66, "2,3,5,6": 0.69, "2,4,5,6": 0.65, "3,4,5,6": 0.67,
    "1,2,3,4,5": 0.82, "1,2,3,4,6": 0.81, "1,2,3,5,6": 0.84, "1,2,4,5,6": 0.80, "1,3,4,5,6": 0.82,
    "2,3,4,5,6": 0.83,
}
SIX_ATTRIBUTE_BETAS = (0.17, 0.18, 0.20, 0.16, 0.19, 0.18)

DESIGN_MEMBERSHIPS = (
    HalfTriangularDecreasing(3.0, 7.0),
    HalfTriangularDecreasing(3.5, 6.5),
    Trapezoidal(2.0, 4.0, 6.0, 7.0),
    Trapezoidal(3.5, 5.5, 7.5, 8.5),
    HalfTriangularDecreasing(3.3, 6.8),
    Trapezoidal(2.5, 5.0, 6.5, 7.5),
)
DESIGN_ASCS = (0.0, -0.7, -0.6, -0.5, -0.4)
DESIGN_THETA = ((1.0, 0.5, 0.5, 0.5), (0.5, 1.1, 0.5, 0.5), (0.5, 0.5, 1.2, 0.5), (0.5, 0.5, 0.5, 1.3))
IID_THETA = ((1.0, 0.5, 0.5, 0.5), (0.5, 1.0, 0.5, 0.5), (0.5, 0.5, 1.0, 0.5), (0.5, 0.5, 0.5, 1.0))
# per-attribute percentage changes for marginal effects in the generality study
GENERALITY_CHANGES = (-0.25, -0.20, -0.28, 0.25)


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating process plus the model fitted to it.

    ``utility`` is the true aggregation (``choquet`` or ``weighted_sum``) and
    ``fit`` the aggregation estimated.  A weighted-sum truth fitted with a
    Choquet model is represented exactly by an additive capacity times a
    free scale.  ``normalization`` is ``minmax`` (positive direction) or
    ``cutoff`` (``memberships`` per attribute).
    """

    name: str = "CI-IID"
    n_individuals: int = 1500
    n_tasks: int = 1
    n_alternatives: int = 5
    n_attributes: int = 4
    attribute_low: float = 1.0
    attribute_high: float = 10.0
    utility: str = "choquet"
    capacity: Capacity | None = None
    ws_betas: tuple[float, ...] | None = None
    ascs: tuple[float, ...] = DESIGN_ASCS
    normalization: str = "minmax"
    memberships: tuple = ()
    error_kind: ErrorKind = ErrorKind.IID
    error_cov: tuple[tuple[float, ...], ...] = IID_THETA
    fit: str = "choquet"
    replications: int = 10
    seed: int = 20240611
    marginal_effect_changes: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "error_kind", ErrorKind(self.error_kind))
        if self.utility not in ("choquet", "weighted_sum") or self.fit not in ("choquet", "weighted_sum"):
            raise ValueError("utility and fit must be 'choquet' or 'weighted_sum'")
        if self.utility == "choquet":
            if self.capacity is None or self.capacity.g != self.n_attributes:
                raise ValueError("a Choquet DGP needs a capacity over n_attributes attributes")
            bad = self.capacity.violations()
            if bad:
                raise ValueError(f"true capacity invalid: {bad[0]}")
        elif self.ws_betas is None or len(self.ws_betas) != self.n_attributes:
            raise ValueError("a weighted-sum DGP needs one beta per attribute")
        if len(self.ascs) != self.n_alternatives or self.ascs[0] != 0:
            raise ValueError("need one ASC per alternative with the first fixed at 0")
        if self.normalization == "cutoff" and len(self.memberships) != self.n_attributes:
            raise ValueError("cut-off normalisation needs one membership per attribute")
        if self.normalization not in ("minmax", "cutoff"):
            raise ValueError("normalization must be 'minmax' or 'cutoff'")
        if np.asarray(self.error_cov).shape != (self.n_alternatives - 1,) * 2:
            raise ValueError("error_cov must be the (I-1)x(I-1) differenced covariance")
        if self.marginal_effect_changes and len(self.marginal_effect_changes) != self.n_attributes:
            raise ValueError("need one marginal-effect change per attribute")
        if self.n_individuals < 1 or self.n_tasks < 1 or self.replications < 0:
            raise ValueError("sizes must be positive")

    def replace(self, **changes) -> "DgpConfig":
        return dataclasses.replace(self, **changes)

    @property
    def attribute_names(self) -> list[str]:
        return [f"x{k + 1}" for k in range(self.n_attributes)]

    def error_structure(self) -> ErrorStructure:
        template = ErrorStructure(self.error_kind, self.n_alternatives)
        return template.with_params(template.params_for(np.asarray(self.error_cov)))

    def _rules(self, estimated: bool):
        if self.normalization == "minmax":
            return [MinMaxRange(Direction.POSITIVE)] * self.n_attributes
        if estimated:
            return [CutoffRule(shape_name(m)) for m in self.memberships]
        return list(self.memberships)

    def _spec(self, aggregation: str, estimated: bool) -> UtilitySpec:
        attrs = tuple(CiAttribute(n, n, r) for n, r in zip(self.attribute_names, self._rules(estimated)))
        scale = estimated and aggregation == "choquet" and self.utility == "weighted_sum"
        return UtilitySpec(self.n_alternatives, attrs, asc=True, aggregation=aggregation, estimate_scale=scale)

    def estimation_spec(self) -> UtilitySpec:
        return self._spec(self.fit, estimated=True)

    def dgp_spec(self) -> UtilitySpec:
        return self._spec(self.utility, estimated=False)

    def dgp_parameters(self) -> ModelParameters:
        if self.utility == "choquet":
            group = capacity_to_mobius(self.capacity).free
        else:
            group = np.asarray(self.ws_betas, dtype=float)
        betas = {f"asc_{j + 1}": float(a) for j, a in enumerate(self.ascs) if j}
        return ModelParameters((group,), {}, betas, 1.0)

    def true_theta(self) -> np.ndarray | None:
        """Truth in the estimation parameterisation, or None if not representable."""
        spec = self.estimation_spec()
        err = self.error_structure()
        if self.utility == self.fit:
            group = self.dgp_parameters().group_values[0]
            scale = 1.0
        elif self.fit == "choquet":
            betas = np.asarray(self.ws_betas, dtype=float)
            scale = float(betas.sum())
            g = self.n_attributes
            group = np.zeros((1 << g) - 1)
            for i in range(g):
                group[(1 << i) - 1] = betas[i] / scale
        else:
            return None
        cutoffs = {}
        if self.normalization == "cutoff":
            for name, m in zip(self.attribute_names, self.memberships):
                cutoffs[name] = points_to_log_gaps(m.points)
        params = ModelParameters((group,), cutoffs, self.dgp_parameters().betas, scale)
        return PackingMap(spec, err).pack(params, err)

    def scaled(self, full_scale: bool) -> "DgpConfig":
        return self.replace(replications=50, n_individuals=3000) if full_scale else self


def design_dgp(name: str = "CI-IID", n_attributes: int = 4, **overrides) -> DgpConfig:
    """Simulation designs by name: CI-IID, CIC-IID, CIC-DE, CIC-FE.

    ``utility="weighted_sum"`` switches the truth to mean effects equal to
    the singleton capacity values.
    """
    if n_attributes not in (4, 6):
        raise ValueError("designs exist for 4 and 6 attributes")
    capacity = Capacity.from_labels(
        n_attributes, FOUR_ATTRIBUTE_CAPACITY if n_attributes == 4 else SIX_ATTRIBUTE_CAPACITY
    )
    betas = FOUR_ATTRIBUTE_BETAS if n_attributes == 4 else SIX_ATTRIBUTE_BETAS
    table = {
        "CI-IID": ("minmax", ErrorKind.IID, IID_THETA),
        "CIC-IID": ("cutoff", ErrorKind.IID, IID_THETA),
        "CIC-DE": ("cutoff", ErrorKind.DIAGONAL, DESIGN_THETA),
        "CIC-FE": ("cutoff", ErrorKind.FULL, DESIGN_THETA),
    }
    try:
        norm, kind, theta = table[name]
    except KeyError:
        raise ValueError(f"unknown design {name!r}; choose from {sorted(table)}") from None
    base = dict(
        name=name,
        n_attributes=n_attributes,
        capacity=capacity,
        ws_betas=betas,
        normalization=norm,
        memberships=DESIGN_MEMBERSHIPS[:n_attributes] if norm == "cutoff" else (),
        error_kind=kind,
        error_cov=theta,
    )
    base.update(overrides)
    return DgpConfig(**base)


def generate_dataset(cfg: DgpConfig, replication: int = 0) -> tuple[ChoiceDataset, np.ndarray | None]:
    """One synthetic dataset and the true parameter vector.

    Noise is drawn with a degenerate first alternative and the differenced
    covariance on the others, so utility differences against alternative 1
    have exactly the configured covariance.
    """
    rng = np.random.default_rng([cfg.seed, replication])
    t = cfg.n_individuals * cfg.n_tasks
    i, g = cfg.n_alternatives, cfg.n_attributes
    x = rng.uniform(cfg.attribute_low, cfg.attribute_high, size=(t, i, g))
    columns = {n: x[:, :, k] for k, n in enumerate(cfg.attribute_names)}
    available = np.ones((t, i), dtype=bool)
    model = UtilityModel(cfg.dgp_spec(), columns, available)
    v = model.utilities(cfg.dgp_parameters())
    chol = cfg.error_structure().cholesky()
    eps = np.zeros((t, i))
    eps[:, 1:] = rng.standard_normal((t, i - 1)) @ chol.T
    chosen = np.argmax(v + eps, axis=1) + 1
    inds = np.repeat(np.arange(1, cfg.n_individuals + 1), cfg.n_tasks)
    tasks = np.tile(np.arange(1, cfg.n_tasks + 1), cfg.n_individuals)
    ds = dataset_from_arrays(chosen, available, columns, inds, tasks)
    return ds, cfg.true_theta()


def sdmae(true_params, estimates) -> float:
    """Mean absolute error over replications and parameters over the population std of the truth."""
    truth = np.asarray(true_params, dtype=float)
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    sd = float(np.std(truth))
    if truth.size < 2 or sd == 0:
        raise ValueError("SDMAE needs at least two true values with nonzero spread")
    if est.shape[0] == 0:
        return float("nan")
    return float(np.mean(np.abs(est - truth[None, :])) / sd)


def apb(true_params, estimates) -> float:
    """Absolute percentage bias, skipping true values of exactly zero."""
    truth = np.asarray(true_params, dtype=float)
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    keep = truth != 0
    if est.shape[0] == 0 or not np.any(keep):
        return float("nan")
    return float(np.mean(np.abs(est[:, keep] - truth[keep]) / np.abs(truth[keep])) * 100)


def coverage_probability(true, estimates, std_errors) -> float:
    """Share of 95% intervals containing the truth; NaN standard errors are skipped."""
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(std_errors, dtype=float)
    truth = np.broadcast_to(np.asarray(true, dtype=float), est.shape)
    if est.shape != se.shape:
        raise ValueError("estimates and standard errors differ in shape")
    ok = np.isfinite(se)
    if not np.any(ok):
        return float("nan")
    covered = (est - CRITICAL_T * se <= truth) & (truth <= est + CRITICAL_T * se)
    return float(np.mean(covered[ok]))


def marginal_effect_ttest(true_mean: float, true_std: float, est_mean: float, est_std: float) -> float:
    """``|true - estimated| / sqrt(sd_true^2 + sd_est^2)``; passes when below 1.96."""
    return float(abs(true_mean - est_mean) / np.sqrt(true_std**2 + est_std**2))


def choice_probabilities(
    pmap: PackingMap, theta, dataset: ChoiceDataset, plan: HaltonPlan = HaltonPlan(), alternatives=None
) -> np.ndarray:
    """``(T, I)`` probabilities of the requested (default all) available alternatives."""
    out = np.zeros(dataset.available.shape)
    alts = range(1, dataset.n_alternatives + 1) if alternatives is None else alternatives
    for j in alts:
        rows = np.flatnonzero(dataset.available[:, j - 1])
        if rows.size == 0:
            continue
        sub = dataset.subset(rows)
        sub = ChoiceDataset(sub.individual_ids, sub.task_ids, np.full(rows.size, j), sub.available, sub.columns)
        ev = LikelihoodEvaluator(pmap, sub, plan)
        out[rows, j - 1] = np.exp(ev.task_logprob(theta))
    return out


@dataclass(frozen=True)
class MarginalEffects:
    """Per-task probability changes and their per-alternative summaries."""

    changes: np.ndarray
    quantile_levels: tuple[float, ...]
    quantiles: np.ndarray
    mean: np.ndarray
    std: np.ndarray


DECILES = tuple(np.round(np.linspace(0.1, 0.9, 9), 2))


def marginal_effects(
    pmap: PackingMap,
    theta,
    dataset: ChoiceDataset,
    attribute: str,
    pct_change: float,
    alternatives: Sequence[int] | None = None,
    plan: HaltonPlan = HaltonPlan(),
    quantile_levels: Sequence[float] = DECILES,
) -> MarginalEffects:
    """Probability changes after scaling a column by ``1 + pct_change``.

    Only the listed alternatives (1-based, default all) are scaled; the
    changes of every alternative's probability are reported.
    """
    col = dataset.column(attribute)
    alts = range(1, dataset.n_alternatives + 1) if alternatives is None else alternatives
    scaled = col.copy()
    for j in alts:
        scaled[:, j - 1] *= 1.0 + pct_change
    before = choice_probabilities(pmap, theta, dataset, plan)
    after = choice_probabilities(pmap, theta, dataset.with_column(attribute, scaled), plan)
    changes = np.where(dataset.available, after - before, np.nan)
    levels = tuple(float(q) for q in quantile_levels)
    quant = np.nanquantile(changes, levels, axis=0).T
    return MarginalEffects(changes, levels, quant, np.nanmean(changes, axis=0), np.nanstd(changes, axis=0))


def marginal_effect_cells(
    cfg: DgpConfig, pmap: PackingMap, true_theta, est_theta, dataset: ChoiceDataset, plan: HaltonPlan
) -> list[dict]:
    """t-tests for every (attribute, alternative) cell.

    A cell scales one attribute of one alternative and tracks the change in
    that alternative's probability under the true and estimated parameters.
    """
    base = {k: choice_probabilities(pmap, th, dataset, plan) for k, th in (("true", true_theta), ("est", est_theta))}
    cells = []
    for name, pct in zip(cfg.attribute_names, cfg.marginal_effect_changes):
        col = dataset.column(name)
        for j in range(1, cfg.n_alternatives + 1):
            scaled = col.copy()
            scaled[:, j - 1] *= 1.0 + pct
            shifted = dataset.with_column(name, scaled)
            stats = {}
            for k, th in (("true", true_theta), ("est", est_theta)):
                after = choice_probabilities(pmap, th, shifted, plan, [j])[:, j - 1]
                delta = (after - base[k][:, j - 1])[dataset.available[:, j - 1]]
                stats[k] = (float(np.mean(delta)), float(np.std(delta)))
            tv = marginal_effect_ttest(*stats["true"], *stats["est"])
            cells.append(
                {
                    "attribute": name,
                    "alternative": j,
                    "pct_change": pct,
                    "true_mean": stats["true"][0],
                    "est_mean": stats["est"][0],
                    "t_value": tv,
                    "pass": bool(tv < CRITICAL_T),
                }
            )
    return cells


def _derived_values(pmap: PackingMap, theta) -> np.ndarray:
    """Shapley values then pairwise interactions of every capacity group."""
    out = []
    for mu in pmap.capacities(theta):
        out.extend(shapley(mu))
        out.extend(pairwise_interactions(mu))
    return np.array(out)


@dataclass
class MonteCarloReport:
    name: str
    n_requested: int
    replications: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    groups: dict[str, dict] = field(default_factory=dict)
    marginal_effect_cells: list[dict] = field(default_factory=list)
    mean_abs_interaction: float | None = None

    @property
    def n_completed(self) -> int:
        return len(self.replications)

    @property
    def me_pass_proportion(self) -> float | None:
        if not self.marginal_effect_cells:
            return None
        return float(np.mean([c["pass"] for c in self.marginal_effect_cells]))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_requested": self.n_requested,
            "n_completed": self.n_completed,
            "n_failed": len(self.failures),
            "failures": self.failures,
            "groups": self.groups,
            "mean_abs_interaction": self.mean_abs_interaction,
            "marginal_effect_pass_proportion": self.me_pass_proportion,
            "marginal_effect_cells": self.marginal_effect_cells,
            "replications": self.replications,
        }

    def to_text(self) -> str:
        def fmt(v):
            return "-" if v is None or (isinstance(v, float) and not np.isfinite(v)) else f"{v:.4f}"

        lines = [
            f"Monte Carlo: {self.name}",
            f"replications: {self.n_completed} completed, {len(self.failures)} failed of {self.n_requested}",
            "",
            f"{'group':<22}{'n':>4}{'SDMAE':>10}{'APB %':>10}{'CP':>8}",
        ]
        for g, m in self.groups.items():
            lines.append(f"{g:<22}{m['n_params']:>4}{fmt(m['sdmae']):>10}{fmt(m['apb']):>10}{fmt(m['cp']):>8}")
        if self.mean_abs_interaction is not None:
            lines.append(f"\nmean |interaction index|: {self.mean_abs_interaction:.4f}")
        if self.marginal_effect_cells:
            lines.append(f"marginal-effect t-tests passing: {self.me_pass_proportion:.3f}")
        lines += ["", f"{'rep':>4}{'status':>18}{'iter':>6}{'loglik':>14}{'AIC':>14}"]
        for r in self.replications:
            lines.append(f"{r['replication']:>4}{r['status']:>18}{r['n_iterations']:>6}{r['loglik']:>14.4f}{r['aic']:>14.4f}")
        return "\n".join(lines) + "\n"


def _group_metrics(truth, est, se=None) -> dict:
    truth = np.asarray(truth, dtype=float)
    est = np.asarray(est, dtype=float).reshape(-1, truth.size)
    out = {"n_params": int(truth.size), "sdmae": None, "apb": None, "cp": None}
    if est.shape[0] == 0:
        return out
    if truth.size >= 2 and np.std(truth) > 0:
        out["sdmae"] = sdmae(truth, est)
    val = apb(truth, est)
    out["apb"] = None if not np.isfinite(val) else val
    if se is not None:
        cp = coverage_probability(np.broadcast_to(truth, est.shape), est, np.asarray(se).reshape(est.shape))
        out["cp"] = None if not np.isfinite(cp) else cp
    return out


def run_monte_carlo(
    cfg: DgpConfig,
    config: OptimizerConfig = OptimizerConfig(),
    progress: Callable[[int, EstimationResult], None] | None = None,
) -> MonteCarloReport:
    """Generate, estimate and score ``cfg.replications`` datasets."""
    report = MonteCarloReport(cfg.name, cfg.replications)
    spec = cfg.estimation_spec()
    err = ErrorStructure(cfg.error_kind, cfg.n_alternatives)
    pmap = PackingMap(spec, err)
    thetas, ses, derived = [], [], []
    truth = None
    for rep in range(cfg.replications):
        ds, truth = generate_dataset(cfg, rep)
        res = estimate(ds, spec, err, config)
        row = {
            "replication": rep,
            "status": res.status,
            "n_iterations": res.n_iterations,
            "loglik": res.loglik,
            "aic": res.aic(),
        }
        if progress is not None:
            progress(rep, res)
        if res.status == "failed":
            report.failures.append({"replication": rep, "status": res.status, "message": res.message})
            continue
        report.replications.append(row)
        thetas.append(res.theta)
        ses.append(res.std_errors if config.compute_standard_errors else np.full(res.theta.size, np.nan))
        if spec.aggregation == "choquet":
            derived.append(_derived_values(pmap, res.theta))
        if cfg.marginal_effect_changes and truth is not None:
            report.marginal_effect_cells.extend(
                dict(c, replication=rep) for c in marginal_effect_cells(cfg, pmap, truth, res.theta, ds, config.draws)
            )
    if not thetas:
        return report
    est = np.array(thetas)
    se = np.array(ses)
    if truth is not None:
        by_group: dict[str, list[int]] = {}
        for seg_name, seg in pmap.segments.items():
            label = _GROUP_NAMES.get(seg_name.split("[")[0], seg_name)
            by_group.setdefault(label, []).extend(range(seg.start, seg.stop))
        for label, cols in by_group.items():
            if cols:
                report.groups[label] = _group_metrics(truth[cols], est[:, cols], se[:, cols])
        if derived:
            report.groups["shapley_interaction"] = _group_metrics(_derived_values(pmap, truth), np.array(derived))
    if derived:
        g = spec.n_attributes
        n_pairs = g * (g - 1) // 2
        inter = np.array(derived).reshape(len(derived), -1, g + n_pairs)[:, :, g:]
        report.mean_abs_interaction = float(np.mean(np.abs(inter)))
    return report


_GROUP_NAMES = {"mobius": "ci", "weight": "ci", "cutoff": "cutoff", "beta": "beta", "error": "error", "log_ci_scale": "scale"}
