"""Multinomial probit kernel.

Utilities are differenced against the chosen alternative and the choice
probability becomes an orthant probability of dimension ``I - 1``, evaluated
with the GHK recursive-conditioning simulator on deterministic Halton draws.
Error covariances are identified relative to alternative 1: the differenced
covariance ``Theta`` (alternative ``j`` minus alternative 1, ``j >= 2``)
is parameterised and the undifferenced covariance is ``[[0, 0], [0, Theta]]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

PROBABILITY_FLOOR = 1e-12


class KernelError(ValueError):
    pass


def differencing_matrix(n_alternatives: int, chosen: int) -> np.ndarray:
    """``(I-1) x I`` matrix turning utilities into ``U_j - U_chosen``, ``j != chosen``.

    ``chosen`` is 1-based; rows follow the original alternative order.
    """
    i = int(n_alternatives)
    if i < 2:
        raise KernelError("need at least two alternatives")
    if not 1 <= chosen <= i:
        raise KernelError(f"chosen alternative {chosen} outside 1..{i}")
    others = [j for j in range(i) if j != chosen - 1]
    m = np.zeros((i - 1, i), dtype=int)
    m[np.arange(i - 1), others] = 1
    m[:, chosen - 1] = -1
    return m


def reparam_cholesky_rownorm(lower: np.ndarray) -> np.ndarray:
    """Rescale each row of a lower-triangular factor to unit length.

    Only the strictly lower entries of ``lower`` matter: row ``i`` becomes
    ``(L[i, :i], 1) / sqrt(1 + |L[i, :i]|^2)``.
    """
    lo = np.tril(np.asarray(lower, dtype=float), -1)
    lo = lo + np.eye(lo.shape[0])
    return lo / np.sqrt(np.sum(lo**2, axis=1, keepdims=True))


class ErrorKind(str, enum.Enum):
    IID = "iid"
    DIAGONAL = "diagonal"
    FULL = "full"


class CholeskyMap(str, enum.Enum):
    FREE = "free_cholesky"
    ROW_NORMALIZED = "row_normalized"


DIAGONAL_FLOOR = 0.5
IID_OFF_DIAGONAL = 0.5


def _iid_theta(d: int) -> np.ndarray:
    return np.full((d, d), IID_OFF_DIAGONAL) + (1 - IID_OFF_DIAGONAL) * np.eye(d)


@dataclass(frozen=True)
class ErrorStructure:
    """Differenced error covariance and its free parameters.

    * ``iid``: diagonal 1, off-diagonal 0.5; no free parameters.
    * ``diagonal``: off-diagonal 0.5, first diagonal 1, others
      ``0.5 + exp(p)`` so the matrix stays positive definite.
    * ``full`` with ``free_cholesky``: lower Cholesky factor with top-left 1,
      other diagonal entries ``exp(p)`` and free off-diagonal entries.
    * ``full`` with ``row_normalized``: free strictly-lower entries mapped
      through :func:`reparam_cholesky_rownorm` (unit diagonal covariance).
    """

    kind: ErrorKind
    n_alternatives: int
    free_params: tuple[float, ...] = ()
    parameterization: CholeskyMap = CholeskyMap.FREE

    def __post_init__(self):
        object.__setattr__(self, "kind", ErrorKind(self.kind))
        object.__setattr__(self, "parameterization", CholeskyMap(self.parameterization))
        if self.n_alternatives < 2:
            raise KernelError("need at least two alternatives")
        params = tuple(float(p) for p in self.free_params)
        if not params and self.n_free:
            params = self.default_params()
        if len(params) != self.n_free:
            raise KernelError(f"{self.kind.value} error structure takes {self.n_free} parameters, got {len(params)}")
        object.__setattr__(self, "free_params", params)

    @property
    def dim(self) -> int:
        return self.n_alternatives - 1

    @property
    def n_free(self) -> int:
        d = self.dim
        if self.kind is ErrorKind.IID:
            return 0
        if self.kind is ErrorKind.DIAGONAL:
            return d - 1
        if self.parameterization is CholeskyMap.FREE:
            return d * (d + 1) // 2 - 1
        return d * (d - 1) // 2

    def param_names(self) -> list[str]:
        d = self.dim
        if self.kind is ErrorKind.IID:
            return []
        if self.kind is ErrorKind.DIAGONAL:
            return [f"log_var_excess[{i + 1}]" for i in range(1, d)]
        names = []
        for i in range(1, d):
            names.extend(f"chol[{i + 1},{r + 1}]" for r in range(i))
            if self.parameterization is CholeskyMap.FREE:
                names.append(f"log_chol[{i + 1},{i + 1}]")
        return names

    def default_params(self) -> tuple[float, ...]:
        """Parameters reproducing the iid covariance."""
        return tuple(self.params_for(_iid_theta(self.dim))) if self.kind is not ErrorKind.IID else ()

    def with_params(self, params) -> "ErrorStructure":
        return ErrorStructure(self.kind, self.n_alternatives, tuple(params), self.parameterization)

    def params_for(self, theta: np.ndarray) -> np.ndarray:
        """Free parameters whose covariance equals ``theta`` (within the family)."""
        theta = np.asarray(theta, dtype=float)
        d = self.dim
        if theta.shape != (d, d):
            raise KernelError(f"expected a {d}x{d} differenced covariance")
        if self.kind is ErrorKind.IID:
            return np.zeros(0)
        if self.kind is ErrorKind.DIAGONAL:
            excess = np.diag(theta)[1:] - DIAGONAL_FLOOR
            if np.any(excess <= 0):
                raise KernelError("diagonal entries must exceed 0.5")
            return np.log(excess)
        chol = np.linalg.cholesky(theta)
        out = []
        if self.parameterization is CholeskyMap.FREE:
            if not np.isclose(chol[0, 0], 1.0):
                raise KernelError("top-left differenced variance must be 1")
            for i in range(1, d):
                out.extend(chol[i, :i])
                out.append(np.log(chol[i, i]))
        else:
            if not np.allclose(np.diag(theta), 1.0):
                raise KernelError("row-normalised map needs unit diagonal")
            for i in range(1, d):
                out.extend(chol[i, :i] / chol[i, i])
        return np.array(out)

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of the differenced covariance."""
        d = self.dim
        p = np.asarray(self.free_params)
        if self.kind is ErrorKind.IID:
            return np.linalg.cholesky(_iid_theta(d))
        if self.kind is ErrorKind.DIAGONAL:
            theta = np.full((d, d), IID_OFF_DIAGONAL)
            np.fill_diagonal(theta, np.concatenate([[1.0], DIAGONAL_FLOOR + np.exp(p)]))
            return np.linalg.cholesky(theta)
        lower = np.eye(d)
        pos = 0
        for i in range(1, d):
            lower[i, :i] = p[pos : pos + i]
            pos += i
            if self.parameterization is CholeskyMap.FREE:
                lower[i, i] = np.exp(p[pos])
                pos += 1
        if self.parameterization is CholeskyMap.ROW_NORMALIZED:
            lower = reparam_cholesky_rownorm(lower)
        return lower

    def differenced_cov(self) -> np.ndarray:
        c = self.cholesky()
        return c @ c.T

    def full_cov(self) -> np.ndarray:
        """Undifferenced covariance with a degenerate first alternative."""
        i = self.n_alternatives
        lam = np.zeros((i, i))
        lam[1:, 1:] = self.differenced_cov()
        return lam


def first_primes(n: int) -> list[int]:
    primes: list[int] = []
    k = 2
    while len(primes) < n:
        if all(k % p for p in primes if p * p <= k):
            primes.append(k)
        k += 1
    return primes


def radical_inverse(indices: np.ndarray, base: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).copy()
    out = np.zeros(idx.shape)
    f = 1.0 / base
    while np.any(idx > 0):
        out += f * (idx % base)
        idx //= base
        f /= base
    return out


@dataclass(frozen=True)
class HaltonPlan:
    """Deterministic quasi-random draws for GHK.

    Point ``k`` (1-based) of dimension ``j`` is the radical inverse of
    ``skip + k`` in the ``j``-th prime base.  With ``per_observation_offset``
    zero every observation shares one block; otherwise observation ``n``
    starts ``n * per_observation_offset`` points further along.
    """

    n_draws: int = 500
    skip: int = 100
    per_observation_offset: int = 0

    def __post_init__(self):
        if self.n_draws < 1 or self.skip < 0 or self.per_observation_offset < 0:
            raise KernelError("draw counts must be positive and offsets non-negative")


def halton_draws(plan: HaltonPlan, dimension: int, count: int | None = None, start: int = 0) -> np.ndarray:
    """``(count, dimension)`` Halton points in (0, 1)."""
    count = plan.n_draws if count is None else count
    return _halton_block(dimension, count, plan.skip + start).copy()


@lru_cache(maxsize=64)
def _halton_block(dimension: int, count: int, first: int) -> np.ndarray:
    idx = np.arange(first + 1, first + count + 1)
    block = np.column_stack([radical_inverse(idx, p) for p in first_primes(dimension)]) if dimension else np.zeros((count, 0))
    block.setflags(write=False)
    return block


def _observation_draws(plan: HaltonPlan, dimension: int, n_obs: int, first_obs: int = 0) -> np.ndarray:
    if plan.per_observation_offset == 0:
        return _halton_block(dimension, plan.n_draws, plan.skip)[None, :, :]
    return np.stack(
        [halton_draws(plan, dimension, start=(first_obs + n) * plan.per_observation_offset) for n in range(n_obs)]
    )


def ghk_batch(upper: np.ndarray, chol: np.ndarray, draws: np.ndarray) -> np.ndarray:
    """GHK estimates of ``P(Z <= upper[n])`` for ``Z = chol @ e``, ``e ~ N(0, I)``.

    ``draws`` has shape ``(R, d-1)`` or ``(n, R, d-1)``.
    """
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    n, d = upper.shape
    if d == 1:
        return ndtr(upper[:, 0] / chol[0, 0])
    if draws.ndim == 2:
        draws = draws[None, :, :]
    prob = None
    eta = []
    for j in range(d):
        shifted = upper[:, j : j + 1]
        for k in range(j):
            shifted = shifted - chol[j, k] * eta[k]
        p = ndtr(shifted / chol[j, j])
        prob = p if prob is None else prob * p
        if j < d - 1:
            u = draws[:, :, j] * p
            np.clip(u, 1e-300, 1 - 1e-16, out=u)
            eta.append(ndtri(u))
    return prob.mean(axis=1)


def mvncdf_ghk(upper, cov, plan: HaltonPlan = HaltonPlan()) -> float:
    """``P(Z <= upper)`` for ``Z ~ N(0, cov)``."""
    upper = np.asarray(upper, dtype=float).ravel()
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise KernelError("covariance is not positive definite") from None
    d = upper.shape[0]
    draws = _observation_draws(plan, d - 1, 1)
    return float(np.clip(ghk_batch(upper[None, :], chol, draws)[0], 0.0, 1.0))


def differenced_system(v, chosen: int, lam: np.ndarray, available=None):
    """Upper limits ``-M V`` and covariance ``M Lambda M'`` over available alternatives."""
    v = np.asarray(v, dtype=float)
    avail = np.ones(v.shape[-1], bool) if available is None else np.asarray(available, bool)
    idx = np.flatnonzero(avail)
    if not avail[chosen - 1]:
        raise KernelError("chosen alternative is unavailable")
    pos = int(np.searchsorted(idx, chosen - 1)) + 1
    m = differencing_matrix(idx.size, pos)
    cov = m @ lam[np.ix_(idx, idx)] @ m.T
    return -(v[..., idx] @ m.T), cov


def choice_probability(v, chosen: int, err: ErrorStructure, plan: HaltonPlan = HaltonPlan(), available=None) -> float:
    """Probability that alternative ``chosen`` (1-based) has the highest utility."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise KernelError("utilities must be finite")
    if v.shape != (err.n_alternatives,):
        raise KernelError(f"expected {err.n_alternatives} utilities")
    avail = np.ones(v.shape[0], bool) if available is None else np.asarray(available, bool)
    if not avail[chosen - 1]:
        raise KernelError("chosen alternative is unavailable")
    if avail.sum() == 1:
        return 1.0
    upper, cov = differenced_system(v, chosen, err.full_cov(), avail)
    return mvncdf_ghk(upper, cov, plan)
