"""Discrete fuzzy measures (capacities) over a finite attribute set.

Subsets of the ``g`` attributes are encoded as integer bitmasks: attribute
``i`` (0-based) is bit ``i``.  Lattice-valued objects are dense float vectors
of length ``2**g`` indexed by bitmask, so ``values[0]`` is the empty set and
``values[-1]`` the full set.

Human-facing labels are 1-based and comma separated, e.g. ``"1,3"`` for the
subset holding the first and third attributes and ``""`` for the empty set.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from math import factorial
from typing import Iterable, Mapping

import numpy as np
from scipy import sparse

MAX_ATTRIBUTES = 12
TOL = 1e-10


class LatticeError(ValueError):
    """Raised for malformed lattice vectors or out-of-range attribute counts."""


def check_attribute_count(g: int) -> int:
    if not isinstance(g, (int, np.integer)) or not 1 <= g <= MAX_ATTRIBUTES:
        raise LatticeError(f"attribute count must be in 1..{MAX_ATTRIBUTES}, got {g!r}")
    return int(g)


def popcount(bits: int) -> int:
    return bin(int(bits)).count("1")


@lru_cache(maxsize=None)
def _cardinalities(g: int) -> np.ndarray:
    idx = np.arange(1 << g)
    card = np.zeros(1 << g, dtype=np.int64)
    for i in range(g):
        card += (idx >> i) & 1
    card.setflags(write=False)
    return card


def cardinalities(g: int) -> np.ndarray:
    """Popcount of every bitmask in ``0 .. 2**g - 1``."""
    return _cardinalities(check_attribute_count(g))


def subset_label(bits: int, g: int | None = None) -> str:
    """1-based label of a subset, ``"1,3"`` style; the empty set is ``""``."""
    bits = int(bits)
    if bits < 0 or (g is not None and bits >= 1 << g):
        raise LatticeError(f"subset {bits} out of range")
    members = [str(i + 1) for i in range(bits.bit_length()) if bits >> i & 1]
    return ",".join(members)


def parse_label(label: str, g: int) -> int:
    label = label.strip()
    if not label:
        return 0
    bits = 0
    for part in label.split(","):
        try:
            k = int(part)
        except ValueError as exc:
            raise LatticeError(f"bad subset label {label!r}") from exc
        if not 1 <= k <= g:
            raise LatticeError(f"attribute {k} in label {label!r} outside 1..{g}")
        if bits >> (k - 1) & 1:
            raise LatticeError(f"attribute {k} repeated in label {label!r}")
        bits |= 1 << (k - 1)
    return bits


def subset_from_members(members: Iterable[int]) -> int:
    """Bitmask from 1-based attribute numbers."""
    bits = 0
    for k in members:
        bits |= 1 << (int(k) - 1)
    return bits


def _as_lattice_vector(values, g: int) -> np.ndarray:
    g = check_attribute_count(g)
    arr = np.array(values, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != 1 << g:
        raise LatticeError(f"expected a vector of length {1 << g} for g={g}, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _labels_to_vector(g: int, mapping: Mapping[str, float]) -> np.ndarray:
    out = np.zeros(1 << check_attribute_count(g))
    for label, value in mapping.items():
        out[parse_label(str(label), g)] = float(value)
    return out


@dataclass(frozen=True, eq=False)
class Capacity:
    """Set function ``mu`` on subsets of ``g`` attributes.

    Construction only checks the shape; use :meth:`is_valid` (or
    :meth:`checked`) for the boundary and monotonicity conditions, since
    worked examples sometimes carry rounded values such as ``mu(X) = 0.999``.
    """

    g: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_lattice_vector(self.values, self.g))

    @classmethod
    def from_labels(cls, g: int, mapping: Mapping[str, float], *, full: float | None = 1.0) -> "Capacity":
        """Build from ``{"1": 0.3, "1,2": 0.58, ...}``; the full set defaults to 1."""
        vec = _labels_to_vector(g, mapping)
        full_label = subset_label((1 << g) - 1)
        if full is not None and full_label not in {str(k).strip() for k in mapping}:
            vec[-1] = full
        return cls(g, vec)

    @classmethod
    def additive(cls, weights) -> "Capacity":
        w = np.asarray(weights, dtype=float)
        g = check_attribute_count(w.shape[0])
        idx = np.arange(1 << g)
        vals = np.zeros(1 << g)
        for i in range(g):
            vals += np.where((idx >> i) & 1, w[i], 0.0)
        return cls(g, vals)

    @classmethod
    def symmetric(cls, g: int, per_member: float) -> "Capacity":
        return cls(g, cardinalities(g) * float(per_member))

    def checked(self, tol: float = TOL) -> "Capacity":
        problems = self.violations(tol)
        if problems:
            raise LatticeError("invalid capacity: " + "; ".join(problems[:5]))
        return self

    def violations(self, tol: float = TOL) -> list[str]:
        out = []
        v = self.values
        if abs(v[0]) > tol:
            out.append(f"mu(empty) = {v[0]:.6g}")
        if abs(v[-1] - 1.0) > tol:
            out.append(f"mu(X) = {v[-1]:.6g}")
        idx = np.arange(1 << self.g)
        for i in range(self.g):
            sup = idx[(idx >> i) & 1 == 1]
            drop = v[sup ^ (1 << i)] - v[sup]
            for s in sup[drop > tol][:5]:
                out.append(
                    f"mu({subset_label(s ^ (1 << i))}) > mu({subset_label(s)})"
                )
        return out

    def is_monotone(self, tol: float = TOL) -> bool:
        v = self.values
        idx = np.arange(1 << self.g)
        for i in range(self.g):
            sup = idx[(idx >> i) & 1 == 1]
            if np.any(v[sup ^ (1 << i)] - v[sup] > tol):
                return False
        return True

    def is_valid(self, tol: float = TOL) -> bool:
        return not self.violations(tol)

    def __getitem__(self, bits: int) -> float:
        return float(self.values[bits])

    def to_dict(self) -> dict[str, float]:
        return {subset_label(s): float(x) for s, x in enumerate(self.values)}

    @classmethod
    def from_dict(cls, mapping: Mapping[str, float]) -> "Capacity":
        return cls(_infer_g(mapping), _labels_to_vector(_infer_g(mapping), mapping))


@dataclass(frozen=True, eq=False)
class MobiusVector:
    """Möbius representation ``m`` of a capacity (``m[empty] = 0``)."""

    g: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_lattice_vector(self.values, self.g))

    @classmethod
    def from_labels(cls, g: int, mapping: Mapping[str, float]) -> "MobiusVector":
        return cls(g, _labels_to_vector(g, mapping))

    @classmethod
    def from_free(cls, g: int, free) -> "MobiusVector":
        """From the ``2**g - 1`` nonempty-subset entries (bitmask order)."""
        free = np.asarray(free, dtype=float)
        return cls(g, np.concatenate([[0.0], free]))

    @property
    def free(self) -> np.ndarray:
        return self.values[1:]

    def satisfies_constraints(self, tol: float = TOL) -> bool:
        cs = build_constraints(self.g)
        return cs.max_violation(self.free) <= tol

    def to_dict(self) -> dict[str, float]:
        return {subset_label(s): float(x) for s, x in enumerate(self.values)}

    @classmethod
    def from_dict(cls, mapping: Mapping[str, float]) -> "MobiusVector":
        g = _infer_g(mapping)
        return cls(g, _labels_to_vector(g, mapping))


def _infer_g(mapping: Mapping[str, float]) -> int:
    n = len(mapping)
    g = n.bit_length() - 1
    if n < 2 or 1 << g != n:
        raise LatticeError(f"lattice mapping must have 2**g entries, got {n}")
    return g


def zeta(values: np.ndarray, g: int) -> np.ndarray:
    """Subset-sum transform: ``out[F] = sum_{H subset F} values[H]``."""
    out = np.array(values, dtype=float)
    idx = np.arange(1 << g)
    for i in range(g):
        has = (idx >> i) & 1 == 1
        out[has] += out[idx[has] ^ (1 << i)]
    return out


def mobius_inverse(values: np.ndarray, g: int) -> np.ndarray:
    """Inverse of :func:`zeta` (alternating subset sums)."""
    out = np.array(values, dtype=float)
    idx = np.arange(1 << g)
    for i in range(g):
        has = (idx >> i) & 1 == 1
        out[has] -= out[idx[has] ^ (1 << i)]
    return out


def mobius_to_capacity(m: MobiusVector) -> Capacity:
    if not isinstance(m, MobiusVector):
        raise TypeError("expected a MobiusVector")
    if abs(m.values[0]) > TOL:
        raise LatticeError("Möbius vector must vanish on the empty set")
    return Capacity(m.g, zeta(m.values, m.g))


def capacity_to_mobius(mu: Capacity) -> MobiusVector:
    if not isinstance(mu, Capacity):
        raise TypeError("expected a Capacity")
    return MobiusVector(mu.g, mobius_inverse(mu.values, mu.g))


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    """Linear constraints on the nonempty Möbius entries of one capacity.

    Variable ``j`` is the Möbius value of subset ``j + 1``.  The equality is
    ``equality @ m = 1``; every row of ``inequalities`` must be ``>= 0``.
    ``rows[r] = (k, H)`` records that row ``r`` is the monotonicity
    condition ``mu(H + {k}) >= mu(H)``.
    """

    g: int
    equality: np.ndarray
    inequalities: sparse.csr_matrix
    rows: tuple[tuple[int, int], ...]

    @property
    def n_vars(self) -> int:
        return (1 << self.g) - 1

    @property
    def n_inequalities(self) -> int:
        return self.inequalities.shape[0]

    def residuals(self, free: np.ndarray) -> tuple[float, np.ndarray]:
        free = np.asarray(free, dtype=float)
        return float(self.equality @ free - 1.0), self.inequalities @ free

    def max_violation(self, free: np.ndarray) -> float:
        eq, ineq = self.residuals(free)
        worst = abs(eq)
        if ineq.size:
            worst = max(worst, float(-ineq.min()))
        return worst

    def row_label(self, r: int) -> str:
        k, h = self.rows[r]
        return f"mu({subset_label(h | 1 << k)}) >= mu({subset_label(h)})"

    def row_terms(self, r: int) -> frozenset[str]:
        """Labels of the Möbius variables appearing in row ``r``."""
        cols = self.inequalities.indices[self.inequalities.indptr[r]:self.inequalities.indptr[r + 1]]
        return frozenset(subset_label(c + 1) for c in cols)


@lru_cache(maxsize=None)
def _build_constraints(g: int) -> ConstraintSystem:
    full = (1 << g) - 1
    data_rows, data_cols, rows = [], [], []
    r = 0
    for k in range(g):
        bit = 1 << k
        rest = full ^ bit
        h = 0
        while True:
            # all K subset of H, via the standard submask walk
            sub = h
            while True:
                data_rows.append(r)
                data_cols.append((sub | bit) - 1)
                if sub == 0:
                    break
                sub = (sub - 1) & h
            rows.append((k, h))
            r += 1
            if h == rest:
                break
            h = (h - rest) & rest  # next submask of ``rest`` in increasing order
    mat = sparse.csr_matrix(
        (np.ones(len(data_rows)), (data_rows, data_cols)), shape=(r, full)
    )
    mat.sort_indices()
    eq = np.ones(full)
    eq.setflags(write=False)
    return ConstraintSystem(g, eq, mat, tuple(rows))


def build_constraints(g: int) -> ConstraintSystem:
    """Equality plus ``g * 2**(g-1)`` monotonicity rows in Möbius space."""
    return _build_constraints(check_attribute_count(g))


@lru_cache(maxsize=None)
def _interaction_weights(g: int, b: int) -> np.ndarray:
    """Weights by ``|A|`` for a coalition of size ``b`` (exact, then float)."""
    w = [
        Fraction(factorial(g - a - b) * factorial(a), factorial(g - b + 1))
        for a in range(g - b + 1)
    ]
    out = np.array([float(x) for x in w])
    out.setflags(write=False)
    return out


def shapley(mu: Capacity) -> np.ndarray:
    """Shapley value of every attribute (length ``g``)."""
    g = mu.g
    v = mu.values
    card = cardinalities(g)
    w = _interaction_weights(g, 1)
    idx = np.arange(1 << g)
    out = np.empty(g)
    for i in range(g):
        without = idx[(idx >> i) & 1 == 0]
        out[i] = np.sum(w[card[without]] * (v[without | 1 << i] - v[without]))
    return out


def interaction_pair(mu: Capacity, q: int, w: int) -> float:
    """Pairwise interaction index of attributes ``q`` and ``w`` (0-based)."""
    g = mu.g
    if q == w:
        raise ValueError("interaction index needs two distinct attributes")
    if not (0 <= q < g and 0 <= w < g):
        raise IndexError(f"attributes must lie in 0..{g - 1}")
    v = mu.values
    bq, bw = 1 << q, 1 << w
    idx = np.arange(1 << g)
    rest = idx[(idx & (bq | bw)) == 0]
    weights = _interaction_weights(g, 2)[cardinalities(g)[rest]]
    delta = v[rest | bq | bw] - v[rest | bq] - v[rest | bw] + v[rest]
    return float(np.sum(weights * delta))


def interaction_group(mu: Capacity, b: int) -> float:
    """Interaction index of the coalition with bitmask ``b``."""
    g = mu.g
    b = int(b)
    if b <= 0:
        raise ValueError("interaction index of the empty coalition is undefined")
    if b >= 1 << g:
        raise IndexError("coalition outside the attribute set")
    v = mu.values
    size = popcount(b)
    idx = np.arange(1 << g)
    rest = idx[(idx & b) == 0]
    weights = _interaction_weights(g, size)[cardinalities(g)[rest]]
    inner = np.zeros(rest.shape[0])
    c = b
    while True:
        sign = -1.0 if (size - popcount(c)) % 2 else 1.0
        inner += sign * v[rest | c]
        if c == 0:
            break
        c = (c - 1) & b
    return float(np.sum(weights * inner))


def interaction_matrix(mu: Capacity) -> np.ndarray:
    """Symmetric ``g x g`` matrix of pairwise indices with Shapley values on the diagonal."""
    g = mu.g
    out = np.diag(shapley(mu))
    for q, w in combinations(range(g), 2):
        out[q, w] = out[w, q] = interaction_pair(mu, q, w)
    return out


def pair_labels(g: int) -> list[str]:
    return [f"{q + 1},{w + 1}" for q, w in combinations(range(g), 2)]


def pairwise_interactions(mu: Capacity) -> np.ndarray:
    """Pair indices in lexicographic pair order ``(1,2), (1,3), ...``."""
    return np.array([interaction_pair(mu, q, w) for q, w in combinations(range(mu.g), 2)])


def random_capacity(g: int, rng: np.random.Generator) -> Capacity:
    """Random strictly monotone capacity.

    Positive increments are accumulated along a random linear extension of
    the subset lattice (cardinality first, random order within a level) and
    rescaled so the full set gets 1.
    """
    g = check_attribute_count(g)
    n = 1 << g
    card = cardinalities(g)
    order = np.lexsort((rng.random(n), card))  # order[0] is the empty set
    inc = rng.exponential(size=n - 1)
    vals = np.zeros(n)
    vals[order[1:]] = np.cumsum(inc)
    vals /= vals[-1]
    vals[-1] = 1.0
    return Capacity(g, vals)


def uniform_additive_mobius(g: int) -> MobiusVector:
    g = check_attribute_count(g)
    vals = np.zeros(1 << g)
    for i in range(g):
        vals[1 << i] = 1.0 / g
    return MobiusVector(g, vals)
