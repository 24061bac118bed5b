"""Straight-line reference implementations used only by the tests.

Everything here works on frozensets of 1-based attribute numbers and plain
Python loops, sharing no code with the package.
"""

from __future__ import annotations

from itertools import chain, combinations, permutations
from math import factorial

import numpy as np


def subsets(items):
    items = sorted(items)
    return [frozenset(c) for c in chain.from_iterable(combinations(items, r) for r in range(len(items) + 1))]


def mobius_from_capacity(mu: dict, g: int) -> dict:
    """m(H) = sum over F subset of H of (-1)^{|H minus F|} mu(F)."""
    out = {}
    for h in subsets(range(1, g + 1)):
        out[h] = sum((-1) ** (len(h) - len(f)) * mu[f] for f in subsets(h))
    return out


def capacity_from_mobius(m: dict, g: int) -> dict:
    return {f: sum(m[h] for h in subsets(f)) for f in subsets(range(1, g + 1))}


def shapley_by_permutations(mu: dict, g: int) -> list[float]:
    """Average marginal contribution over all orderings of the attributes."""
    totals = [0.0] * g
    perms = list(permutations(range(1, g + 1)))
    for order in perms:
        seen = frozenset()
        for a in order:
            totals[a - 1] += mu[seen | {a}] - mu[seen]
            seen = seen | {a}
    return [t / len(perms) for t in totals]


def interaction_by_definition(mu: dict, g: int, coalition) -> float:
    """Group interaction index summed term by term with factorial weights."""
    b = frozenset(coalition)
    rest = frozenset(range(1, g + 1)) - b
    total = 0.0
    for a in subsets(rest):
        w = factorial(g - len(a) - len(b)) * factorial(len(a)) / factorial(g - len(b) + 1)
        inner = sum((-1) ** (len(b) - len(c)) * mu[a | c] for c in subsets(b))
        total += w * inner
    return total


def choquet_by_sorting(x, mu: dict) -> float:
    """Choquet integral by the textbook ascending-order formula."""
    g = len(x)
    order = sorted(range(1, g + 1), key=lambda a: x[a - 1])
    total, prev = 0.0, 0.0
    for k, a in enumerate(order):
        upper = frozenset(order[k:])
        total += (x[a - 1] - prev) * mu[upper]
        prev = x[a - 1]
    return total


def choquet_mobius_form(x, m: dict) -> float:
    """sum over nonempty H of m(H) * min over H of x."""
    return sum(v * min(x[a - 1] for a in h) for h, v in m.items() if h)


def labels_to_sets(mapping: dict, g: int, full: float | None = 1.0) -> dict:
    out = {frozenset(): 0.0}
    for lab, v in mapping.items():
        out[frozenset(int(t) for t in lab.split(",") if t)] = float(v)
    if full is not None:
        out[frozenset(range(1, g + 1))] = full
    return out


def vector_to_sets(values, g: int) -> dict:
    return {frozenset(a + 1 for a in range(g) if bits >> a & 1): float(values[bits]) for bits in range(1 << g)}


def monotone(mu: dict, g: int, tol: float = 1e-10) -> bool:
    for a in subsets(range(1, g + 1)):
        for extra in range(1, g + 1):
            if extra not in a and mu[a | {extra}] < mu[a] - tol:
                return False
    return True


def minmax(values, positive=True):
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.5] * len(values)
    return [((v - lo) if positive else (hi - v)) / (hi - lo) for v in values]


def half_triangular_decreasing(x, a, b):
    if x <= a:
        return 1.0
    if x <= b:
        return (b - x) / (b - a)
    return 0.0


def half_triangular_increasing(x, a, b):
    if x <= a:
        return 0.0
    if x <= b:
        return (x - a) / (b - a)
    return 1.0


def trapezoid(x, a, b, c, d):
    if x <= a or x > d:
        return 0.0
    if x <= b:
        return (x - a) / (b - a)
    if x <= c:
        return 1.0
    return (d - x) / (d - c)


def crude_orthant_probability(upper, cov, n: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    z = rng.multivariate_normal(np.zeros(len(upper)), cov, size=n)
    return float(np.mean(np.all(z <= np.asarray(upper), axis=1)))
