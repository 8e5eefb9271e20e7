"""Balance objectives over (standardized covariates, allocation).

Every objective is a function of the per-column arm difference
``d = sum_T z - sum_C z``.  Working in ``d`` keeps the value exactly
invariant under a global sign flip, and lets the greedy sweep and the
exhaustive enumerator share the same reduction.

For standardized columns ``d = 2 * sum_T z``, so the L1 objective
``sum_j w_j |d_j| / n`` equals the familiar ``(2/n) sum_j w_j |sum_T z_j|``.
The Mahalanobis objective ``(n/2) delta' S^-1 delta`` with
``delta = d / n`` is evaluated as ``|L' d|^2 / (2n)`` where ``L L' = S^-1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Allocation, StandardizedCovariates
from .errors import DomainError, ShapeError, SingularCovariance

KINDS = ("l1", "weighted-l1", "mahalanobis")
MAX_CONDITION = 1e12
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class BalanceObjective:
    kind: str
    weights: Optional[np.ndarray] = None
    precision: Optional[np.ndarray] = None
    # Cholesky factor L with L L' = precision; columns are mapped z -> z @ L.
    factor: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown objective {self.kind!r}; choose from {KINDS}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise DomainError("weights must be finite and strictly positive")
            w = w.copy()
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        if self.kind == "mahalanobis" and (self.precision is None or self.factor is None):
            raise DomainError("a Mahalanobis objective needs its precision; build it with make_objective")
        if self.precision is not None:
            P = np.asarray(self.precision, dtype=float)
            if not np.allclose(P, P.T, atol=1e-9, rtol=0):
                raise DomainError("precision matrix is not symmetric")

    @property
    def tag(self) -> str:
        return self.kind

    # -- reductions over arm differences ---------------------------------------

    def transform(self, z: np.ndarray) -> np.ndarray:
        """Map standardized rows into the space where the reduction is separable."""
        if self.kind == "mahalanobis":
            return z @ self.factor
        return z

    def column_weights(self, p: int) -> np.ndarray:
        if self.kind == "weighted-l1":
            if self.weights.size != p:
                raise ShapeError(f"{self.weights.size} weights for {p} covariates")
            return self.weights
        return np.ones(p)

    def reduce(self, d: np.ndarray, n: int) -> np.ndarray:
        """Objective value from transformed arm differences ``d`` (last axis = columns)."""
        if self.kind == "mahalanobis":
            return (d * d).sum(axis=-1) / (2.0 * n)
        return (np.abs(d) * self.column_weights(d.shape[-1])).sum(axis=-1) / n

    def tie_tolerance(self, zt: np.ndarray) -> float:
        """Bound on rounding error when evaluating any allocation of ``zt``.

        Candidates this close to the minimum are treated as ties.
        """
        n = zt.shape[0] // 2
        bound = 2.0 * np.abs(zt).sum(axis=0)
        if self.kind == "mahalanobis":
            scale = float((bound * bound).sum() / (2.0 * n))
        else:
            scale = float((bound * self.column_weights(zt.shape[1])).sum() / n)
        return 64.0 * _EPS * max(scale, 1.0)

    # -- direct evaluation -----------------------------------------------------

    def differences(self, z: StandardizedCovariates | np.ndarray, a: Allocation | np.ndarray) -> np.ndarray:
        zz = z.z if isinstance(z, StandardizedCovariates) else np.asarray(z)
        signs = a.signs if isinstance(a, Allocation) else np.asarray(a)
        if signs.shape[0] != zz.shape[0]:
            raise ShapeError(f"allocation of length {signs.shape[0]} for {zz.shape[0]} subjects")
        zt = self.transform(zz)
        return zt[signs == 1].sum(axis=0) - zt[signs == -1].sum(axis=0)

    def evaluate(self, z: StandardizedCovariates | np.ndarray, a: Allocation | np.ndarray) -> float:
        zz = z.z if isinstance(z, StandardizedCovariates) else np.asarray(z)
        return float(self.reduce(self.differences(zz, a), zz.shape[0] // 2))


def make_objective(kind: str, z: StandardizedCovariates, weights=None) -> BalanceObjective:
    """Build an objective for dataset ``z``; Mahalanobis caches its precision here."""
    zz = z.z if isinstance(z, StandardizedCovariates) else np.atleast_2d(np.asarray(z, dtype=float))
    if kind == "l1":
        return BalanceObjective("l1")
    if kind == "weighted-l1":
        if weights is None:
            raise DomainError("weighted-l1 needs weights")
        w = np.asarray(weights, dtype=float)
        if w.shape != (zz.shape[1],):
            raise ShapeError(f"{w.size} weights for {zz.shape[1]} covariates")
        return BalanceObjective("weighted-l1", weights=w)
    if kind == "mahalanobis":
        P = _pooled_precision(zz)
        return BalanceObjective("mahalanobis", precision=P, factor=np.linalg.cholesky(P))
    raise DomainError(f"unknown objective {kind!r}; choose from {KINDS}")


def _pooled_precision(z: np.ndarray) -> np.ndarray:
    rows, p = z.shape
    if rows <= p:
        raise SingularCovariance(f"{rows} subjects cannot support a {p}x{p} covariance")
    S = np.atleast_2d(np.cov(z, rowvar=False, ddof=1))
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularCovariance(f"pooled covariance is singular (condition number {cond:.3g})")
    P = np.linalg.inv(S)
    return (P + P.T) / 2.0


def l1_balance(z: StandardizedCovariates, a: Allocation) -> float:
    return make_objective("l1", z).evaluate(z, a)


def weighted_l1_balance(z: StandardizedCovariates, a: Allocation, w) -> float:
    return make_objective("weighted-l1", z, w).evaluate(z, a)


def mahalanobis_balance(z: StandardizedCovariates, a: Allocation) -> float:
    """``(n/2) delta' S^-1 delta``; approximately chi-square(p) under complete randomization."""
    return make_objective("mahalanobis", z).evaluate(z, a)
