"""Choquet aggregation and systematic utilities.

The integral is evaluated in sorted-prefix form: attributes are ordered by
descending normalised value (ties by ascending index) and each value is
weighted by the capacity increment of the growing coalition.  The utility
model combines a weighted-sum part (alternative-specific constants and
linear covariates) with a scaled Choquet part per capacity group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .fuzzy_measures import Capacity, MobiusVector, check_attribute_count, zeta
from .membership import (
    SHAPES,
    CutoffParameterization,
    Direction,
    HalfTriangularDecreasing,
    HalfTriangularIncreasing,
    MinMaxRange,
    Trapezoidal,
    cumulative_points,
    evaluate_shape,
    normalize_minmax_rows,
    shape_name,
)


class SpecError(ValueError):
    """Inconsistent utility specification."""


class MissingColumnError(KeyError):
    """A column referenced by the model is absent from the data."""

    def __init__(self, column: str):
        super().__init__(column)
        self.column = column

    def __str__(self):
        return f"missing column {self.column!r}"


def choquet_rows(x: np.ndarray, mu_values: np.ndarray) -> np.ndarray:
    """Choquet integral of every row of ``x`` against one capacity vector."""
    x = np.asarray(x, dtype=float)
    n, g = x.shape
    if mu_values.shape[0] != 1 << g:
        raise ValueError(f"capacity has {mu_values.shape[0]} entries, rows have {g} attributes")
    order = np.argsort(-x, axis=1, kind="stable")
    xs = np.take_along_axis(x, order, axis=1)
    coalitions = np.cumsum(np.left_shift(1, order), axis=1)
    prefix = mu_values[coalitions]
    increments = np.diff(prefix, axis=1, prepend=0.0)
    return np.einsum("ij,ij->i", xs, increments)


def choquet_integral(x, mu: Capacity) -> float:
    """Choquet integral of one normalised attribute row."""
    row = np.asarray(x, dtype=float)
    if row.ndim != 1 or row.shape[0] != mu.g:
        raise ValueError(f"expected {mu.g} attribute values, got shape {row.shape}")
    return float(choquet_rows(row[None, :], mu.values)[0])


@dataclass(frozen=True)
class CutoffRule:
    """Estimated break points for one attribute.

    ``covariates[k]`` lists the demographic columns entering point ``k``
    besides the intercept.  The default keeps every point constant-only.
    """

    shape: str
    covariates: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise SpecError(f"unknown membership shape {self.shape!r}")
        n = SHAPES[self.shape][1]
        covs = tuple(tuple(c) for c in self.covariates) or ((),) * n
        if len(covs) != n:
            raise SpecError(f"{self.shape} needs covariate lists for {n} points")
        object.__setattr__(self, "covariates", covs)

    @property
    def n_points(self) -> int:
        return SHAPES[self.shape][1]

    @property
    def n_coefficients(self) -> int:
        return sum(1 + len(c) for c in self.covariates)

    def coefficient_names(self) -> list[str]:
        names = []
        for k, covs in enumerate(self.covariates):
            names.append(f"p{k + 1}:const")
            names.extend(f"p{k + 1}:{c}" for c in covs)
        return names

    def split(self, coefficients) -> list[np.ndarray]:
        coefficients = np.asarray(coefficients, dtype=float)
        out, pos = [], 0
        for covs in self.covariates:
            out.append(coefficients[pos : pos + 1 + len(covs)])
            pos += 1 + len(covs)
        return out

    def parameterization(self, coefficients) -> CutoffParameterization:
        """Dense form over the union of this rule's covariates."""
        names = sorted({c for covs in self.covariates for c in covs})
        rows = []
        for covs, coefs in zip(self.covariates, self.split(coefficients)):
            row = [coefs[0]] + [0.0] * len(names)
            for c, v in zip(covs, coefs[1:]):
                row[1 + names.index(c)] = v
            rows.append(tuple(row))
        return CutoffParameterization(self.shape, tuple(rows), tuple(names))


NormalizationRule = Union[MinMaxRange, HalfTriangularDecreasing, HalfTriangularIncreasing, Trapezoidal, CutoffRule]


@dataclass(frozen=True)
class CiAttribute:
    """One attribute entering the Choquet part.

    ``alt_rules`` overrides ``rule`` for the listed alternatives (1-based);
    each override with a :class:`CutoffRule` gets its own coefficients.
    """

    name: str
    column: str
    rule: NormalizationRule = MinMaxRange(Direction.POSITIVE)
    alt_rules: tuple[tuple[tuple[int, ...], NormalizationRule], ...] = ()

    def rule_for(self, alternative: int) -> tuple[str, NormalizationRule]:
        for alts, rule in self.alt_rules:
            if alternative in alts:
                return f"{self.name}@{','.join(map(str, alts))}", rule
        return self.name, self.rule


@dataclass(frozen=True)
class WsTerm:
    """Linear covariate.  ``generic`` shares one coefficient across alternatives."""

    column: str
    alternatives: tuple[int, ...] | None = None
    generic: bool = True

    def coefficient_names(self, n_alternatives: int) -> list[str]:
        if self.generic:
            return [f"b_{self.column}"]
        return [f"b_{self.column}_{j}" for j in self.applies_to(n_alternatives)]

    def applies_to(self, n_alternatives: int) -> tuple[int, ...]:
        return self.alternatives if self.alternatives is not None else tuple(range(1, n_alternatives + 1))


@dataclass(frozen=True)
class UtilitySpec:
    """Composition of the systematic utility.

    ``capacity_groups`` partitions (a subset of) the alternatives; a single
    group is the generic case.  With ``aggregation="weighted_sum"`` each group
    carries free linear weights on the normalised attributes instead of a
    capacity.
    """

    n_alternatives: int
    ci_attributes: tuple[CiAttribute, ...] = ()
    ws_terms: tuple[WsTerm, ...] = ()
    asc: bool = True
    capacity_groups: tuple[tuple[int, ...], ...] | None = None
    aggregation: str = "choquet"
    ci_scale: float = 1.0
    estimate_scale: bool = False

    def __post_init__(self):
        i = self.n_alternatives
        if i < 2:
            raise SpecError("need at least two alternatives")
        if self.ci_attributes:
            check_attribute_count(len(self.ci_attributes))
        groups = self.capacity_groups
        if groups is None:
            groups = (tuple(range(1, i + 1)),) if self.ci_attributes else ()
        groups = tuple(tuple(int(a) for a in grp) for grp in groups)
        seen = [a for grp in groups for a in grp]
        if len(seen) != len(set(seen)) or any(not 1 <= a <= i for a in seen):
            raise SpecError("capacity groups must be disjoint sets of alternatives in 1..I")
        if groups and not self.ci_attributes:
            raise SpecError("capacity groups given without Choquet attributes")
        object.__setattr__(self, "capacity_groups", groups)
        if self.aggregation not in ("choquet", "weighted_sum"):
            raise SpecError(f"unknown aggregation {self.aggregation!r}")
        if self.aggregation == "weighted_sum" and self.estimate_scale:
            raise SpecError("a free scale is not identified alongside free weighted-sum weights")
        if not self.ci_scale > 0:
            raise SpecError("ci_scale must be positive")
        names = [a.name for a in self.ci_attributes]
        if len(names) != len(set(names)):
            raise SpecError("duplicate Choquet attribute names")
        for term in self.ws_terms:
            if any(not 1 <= a <= i for a in term.applies_to(i)):
                raise SpecError(f"term {term.column!r} refers to an alternative outside 1..{i}")

    @property
    def n_attributes(self) -> int:
        return len(self.ci_attributes)

    @property
    def ci_alternatives(self) -> tuple[int, ...]:
        return tuple(sorted(a for grp in self.capacity_groups for a in grp))

    def asc_names(self) -> list[str]:
        return [f"asc_{j}" for j in range(2, self.n_alternatives + 1)] if self.asc else []

    def beta_names(self) -> list[str]:
        names = self.asc_names()
        for term in self.ws_terms:
            names.extend(term.coefficient_names(self.n_alternatives))
        return names

    def cutoff_rules(self) -> list[tuple[str, CiAttribute, CutoffRule, tuple[int, ...]]]:
        """Every estimated cut-off rule with the alternatives it governs, in spec order."""
        out: dict[str, tuple[CiAttribute, CutoffRule, list[int]]] = {}
        for attr in self.ci_attributes:
            for alt in self.ci_alternatives:
                key, rule = attr.rule_for(alt)
                if isinstance(rule, CutoffRule):
                    out.setdefault(key, (attr, rule, []))[2].append(alt)
        return [(key, a, r, tuple(alts)) for key, (a, r, alts) in out.items()]

    def referenced_columns(self) -> tuple[list[str], list[str]]:
        """(alternative-level columns, demographic columns) used by the model."""
        cols = [a.column for a in self.ci_attributes] + [t.column for t in self.ws_terms]
        demo = sorted({c for _, _, r, _ in self.cutoff_rules() for covs in r.covariates for c in covs})
        return list(dict.fromkeys(cols)), demo


@dataclass(frozen=True)
class ModelParameters:
    """Structured utility parameters (error structure excluded)."""

    group_values: tuple[np.ndarray, ...] = ()
    cutoffs: Mapping[str, np.ndarray] = field(default_factory=dict)
    betas: Mapping[str, float] = field(default_factory=dict)
    ci_scale: float = 1.0

    def mobius(self, group: int, g: int) -> MobiusVector:
        return MobiusVector.from_free(g, self.group_values[group])

    def capacity(self, group: int, g: int) -> Capacity:
        return Capacity(g, zeta(np.concatenate([[0.0], self.group_values[group]]), g))


@dataclass(frozen=True)
class Observation:
    """Raw inputs of one choice task."""

    columns: Mapping[str, Sequence[float]]
    available: Sequence[bool] | None = None
    demographics: Mapping[str, float] = field(default_factory=dict)


class UtilityModel:
    """Utilities for a stack of tasks with all parameter-free work done once.

    ``columns`` maps column name to a ``(T, I)`` array, ``demographics`` maps
    name to a ``(T,)`` array and ``available`` is a ``(T, I)`` boolean mask.
    """

    def __init__(self, spec: UtilitySpec, columns, available, demographics=None):
        self.spec = spec
        self.available = np.asarray(available, dtype=bool)
        t, i = self.available.shape
        if i != spec.n_alternatives:
            raise SpecError(f"data has {i} alternatives, model expects {spec.n_alternatives}")
        demographics = demographics or {}
        cols, demo = spec.referenced_columns()
        for c in cols:
            if c not in columns:
                raise MissingColumnError(c)
        for c in demo:
            if c not in demographics:
                raise MissingColumnError(c)
        self.n_tasks = t
        self._ws = []
        for term in spec.ws_terms:
            x = np.asarray(columns[term.column], dtype=float)
            self._ws.append((term, np.where(self.available, x, 0.0)))
        ci_alts = np.zeros(i, dtype=bool)
        for a in spec.ci_alternatives:
            ci_alts[a - 1] = True
        self._ci_mask = self.available & ci_alts[None, :]
        self._raw = {}
        self._static = {}
        self._dynamic = []
        for gi, attr in enumerate(spec.ci_attributes):
            raw = np.asarray(columns[attr.column], dtype=float)
            self._raw[attr.name] = raw
            base = np.zeros((t, i))
            for alt in spec.ci_alternatives:
                key, rule = attr.rule_for(alt)
                col = alt - 1
                if isinstance(rule, CutoffRule):
                    continue
                if isinstance(rule, MinMaxRange):
                    norm = normalize_minmax_rows(raw, self._ci_mask, rule.direction)[:, col]
                else:
                    norm = evaluate_shape(shape_name(rule), raw[:, col], rule.points)
                base[:, col] = np.where(self._ci_mask[:, col], norm, 0.0)
            self._static[attr.name] = base
        for key, attr, rule, alts in spec.cutoff_rules():
            z = []
            for covs in rule.covariates:
                z.append(np.column_stack([np.ones(t)] + [np.asarray(demographics[c], dtype=float) for c in covs]))
            cols_idx = np.array(alts) - 1
            self._dynamic.append((key, spec.ci_attributes.index(attr), rule, cols_idx, z))
        self._groups = [np.array(grp) - 1 for grp in spec.capacity_groups]

    def normalized(self, params: ModelParameters) -> np.ndarray:
        """Normalised attribute cube ``(T, I, G)``; zero outside the Choquet part."""
        spec = self.spec
        t, i = self.available.shape
        out = np.zeros((t, i, spec.n_attributes))
        for gi, attr in enumerate(spec.ci_attributes):
            out[:, :, gi] = self._static[attr.name]
        for key, gi, rule, cols_idx, z in self._dynamic:
            coefs = rule.split(params.cutoffs[key])
            eta = np.column_stack([zk @ ck for zk, ck in zip(z, coefs)])
            points = cumulative_points(eta)
            raw = self._raw[spec.ci_attributes[gi].name][:, cols_idx]
            vals = evaluate_shape(rule.shape, raw, [points[:, k : k + 1] for k in range(rule.n_points)])
            out[:, cols_idx, gi] = np.where(self._ci_mask[:, cols_idx], vals, 0.0)
        return out

    def utilities(self, params: ModelParameters) -> np.ndarray:
        """Systematic utilities ``(T, I)``; unavailable entries are 0."""
        spec = self.spec
        t, i = self.available.shape
        v = np.zeros((t, i))
        if spec.asc:
            for j in range(2, i + 1):
                v[:, j - 1] += params.betas[f"asc_{j}"]
        for term, x in self._ws:
            alts = term.applies_to(i)
            for name, j in zip(term.coefficient_names(i) * (len(alts) if term.generic else 1), alts):
                v[:, j - 1] += params.betas[name] * x[:, j - 1]
        if spec.n_attributes:
            g = spec.n_attributes
            xn = self.normalized(params)
            for gidx, cols in enumerate(self._groups):
                rows = xn[:, cols, :].reshape(-1, g)
                if spec.aggregation == "choquet":
                    mu = zeta(np.concatenate([[0.0], params.group_values[gidx]]), g)
                    agg = choquet_rows(rows, mu) * params.ci_scale
                else:
                    agg = rows @ np.asarray(params.group_values[gidx])
                v[:, cols] += agg.reshape(t, len(cols))
        return np.where(self.available, v, 0.0)


def systematic_utilities(spec: UtilitySpec, params: ModelParameters, observation: Observation) -> np.ndarray:
    """Utilities of the alternatives of a single task."""
    i = spec.n_alternatives
    avail = np.ones(i, dtype=bool) if observation.available is None else np.asarray(observation.available, bool)
    cols = {k: np.asarray(v, dtype=float).reshape(1, i) for k, v in observation.columns.items()}
    demo = {k: np.array([float(v)]) for k, v in observation.demographics.items()}
    return UtilityModel(spec, cols, avail[None, :], demo).utilities(params)[0]
