"""Normalisation of raw attribute values into [0, 1].

Two families are supported: min-max range normalisation across the
alternatives of one choice task, and piecewise-linear fuzzy membership
functions whose break points are either fixed or resolved per decision
maker from demographic covariates.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class Direction(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class MembershipError(ValueError):
    pass


@dataclass(frozen=True)
class MinMaxRange:
    direction: Direction = Direction.POSITIVE

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))


@dataclass(frozen=True)
class HalfTriangularDecreasing:
    """1 up to ``a``, linear down to 0 at ``b``."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise MembershipError(f"half-triangular needs a < b, got {self.a}, {self.b}")

    @property
    def points(self) -> tuple[float, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class HalfTriangularIncreasing:
    """0 up to ``a``, linear up to 1 at ``b``."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise MembershipError(f"half-triangular needs a < b, got {self.a}, {self.b}")

    @property
    def points(self) -> tuple[float, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class Trapezoidal:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not (self.a <= self.b <= self.c <= self.d and self.a < self.d):
            raise MembershipError(
                f"trapezoid needs a <= b <= c <= d and a < d, got {self.points}"
            )

    @property
    def points(self) -> tuple[float, ...]:
        return (self.a, self.b, self.c, self.d)


MembershipSpec = Union[MinMaxRange, HalfTriangularDecreasing, HalfTriangularIncreasing, Trapezoidal]

SHAPES = {
    "half_decreasing": (HalfTriangularDecreasing, 2),
    "half_increasing": (HalfTriangularIncreasing, 2),
    "trapezoidal": (Trapezoidal, 4),
}


def shape_name(spec) -> str:
    for name, (cls, _) in SHAPES.items():
        if isinstance(spec, cls):
            return name
    raise TypeError(f"{type(spec).__name__} has no break points")


def make_membership(shape: str, points: Sequence[float]) -> MembershipSpec:
    try:
        cls, n = SHAPES[shape]
    except KeyError:
        raise MembershipError(f"unknown membership shape {shape!r}") from None
    if len(points) != n:
        raise MembershipError(f"{shape} takes {n} points, got {len(points)}")
    return cls(*map(float, points))


def normalize_minmax(values, direction: Direction | str = Direction.POSITIVE) -> np.ndarray:
    """Rescale one attribute across the alternatives of a task.

    A degenerate range (all values equal) maps every alternative to 0.5.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.shape[0] < 2:
        raise MembershipError("min-max normalisation needs at least two values")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    if Direction(direction) is Direction.POSITIVE:
        return (x - lo) / (hi - lo)
    return (hi - x) / (hi - lo)


def normalize_minmax_rows(x: np.ndarray, available: np.ndarray, direction: Direction | str) -> np.ndarray:
    """Row-wise :func:`normalize_minmax` over the available entries of each row.

    Unavailable entries come back as NaN.
    """
    x = np.asarray(x, dtype=float)
    avail = np.asarray(available, dtype=bool)
    lo = np.where(avail, x, np.inf).min(axis=1, keepdims=True)
    hi = np.where(avail, x, -np.inf).max(axis=1, keepdims=True)
    span = hi - lo
    degenerate = span <= 0
    safe = np.where(degenerate, 1.0, span)
    if Direction(direction) is Direction.POSITIVE:
        out = (x - lo) / safe
    else:
        out = (hi - x) / safe
    out = np.where(degenerate, 0.5, out)
    return np.where(avail, out, np.nan)


def _ramp(num, den):
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.clip(np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0), 0.0, 1.0)


def half_decreasing(x, a, b):
    x = np.asarray(x, dtype=float)
    return np.where(x <= a, 1.0, np.where(x <= b, _ramp(b - x, b - a), 0.0))


def half_increasing(x, a, b):
    x = np.asarray(x, dtype=float)
    return np.where(x <= a, 0.0, np.where(x <= b, _ramp(x - a, b - a), 1.0))


def trapezoid(x, a, b, c, d):
    x = np.asarray(x, dtype=float)
    return np.where(
        x <= a,
        0.0,
        np.where(
            x <= b,
            _ramp(x - a, b - a),
            np.where(x <= c, 1.0, np.where(x <= d, _ramp(d - x, d - c), 0.0)),
        ),
    )


_EVALUATORS = {
    "half_decreasing": half_decreasing,
    "half_increasing": half_increasing,
    "trapezoidal": trapezoid,
}


def evaluate_shape(shape: str, x, points):
    """Vectorised membership for a shape name and (broadcastable) break points."""
    return _EVALUATORS[shape](x, *points)


def membership_value(x, spec: MembershipSpec):
    """Membership of raw value(s) ``x`` under a fixed break-point spec.

    Intervals are half open on the left as in ``a < x <= b``.
    """
    if isinstance(spec, MinMaxRange):
        raise MembershipError("min-max normalisation depends on the whole task; use normalize_minmax")
    out = evaluate_shape(shape_name(spec), x, spec.points)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CutoffParameterization:
    """Break points driven by demographics through cumulative positive gaps.

    Every row of ``coefficients`` multiplies the same vector
    ``z = (1, covariates...)``.  Point 0 is ``exp(row_0 . z)`` and point
    ``k`` adds ``exp(row_k . z)`` to point ``k - 1``, so the points are
    strictly increasing for any finite coefficients.
    """

    shape: str
    coefficients: tuple[tuple[float, ...], ...]
    covariates: tuple[str, ...] = ()

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise MembershipError(f"unknown membership shape {self.shape!r}")
        n = SHAPES[self.shape][1]
        coefs = tuple(tuple(float(c) for c in row) for row in self.coefficients)
        covs = tuple(self.covariates)
        if len(coefs) != n:
            raise MembershipError(f"{self.shape} needs {n} coefficient rows, got {len(coefs)}")
        for row in coefs:
            if len(row) != len(covs) + 1:
                raise MembershipError("each coefficient row is an intercept plus one entry per covariate")
        object.__setattr__(self, "coefficients", coefs)
        object.__setattr__(self, "covariates", covs)

    @property
    def lower_coeffs(self) -> tuple[float, ...]:
        return self.coefficients[0]

    @property
    def upper_coeffs(self) -> tuple[float, ...]:
        return self.coefficients[-1]

    @classmethod
    def from_points(cls, shape: str, points: Sequence[float]) -> "CutoffParameterization":
        """Constant-only parameterisation reproducing fixed break points."""
        return cls(shape, tuple((float(e),) for e in points_to_log_gaps(points)))


def points_to_log_gaps(points: Sequence[float]) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    gaps = np.diff(np.concatenate([[0.0], pts]))
    if np.any(gaps <= 0):
        raise MembershipError("break points must be positive and strictly increasing")
    return np.log(gaps)


def cumulative_points(linear_indices) -> np.ndarray:
    """Map per-point linear indices (last axis) to increasing break points."""
    eta = np.asarray(linear_indices, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise MembershipError("non-finite linear index for a cut-off point")
    return np.cumsum(np.exp(eta), axis=-1)


def resolve_cutoffs(param: CutoffParameterization, demographics) -> tuple[float, ...]:
    """Break points for one decision maker.

    ``demographics`` is either a mapping from covariate name to value or the
    vector ``(1, z_1, ..., z_p)`` in the order of ``param.covariates``.
    """
    if isinstance(demographics, dict):
        z = np.array([1.0] + [float(demographics[n]) for n in param.covariates])
    else:
        z = np.asarray(demographics, dtype=float)
        if z.ndim != 1 or z.shape[0] != len(param.covariates) + 1 or z[0] != 1.0:
            raise MembershipError("covariate vector must be (1, covariates...) matching the parameterisation")
    eta = np.asarray(param.coefficients) @ z
    return tuple(float(p) for p in cumulative_points(eta))


def membership_for(param: CutoffParameterization, x, demographics) -> float:
    return float(evaluate_shape(param.shape, x, resolve_cutoffs(param, demographics)))
