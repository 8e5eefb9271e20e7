"""Pairwise co-assignment probabilities and the entropy / deviation randomness metrics.

Under complete randomization every pair of subjects shares an arm with
probability ``s_n = (n-1)/(2n-1)``.  A design method is summarized by the
estimated probability ``p_s`` for each of the C(2n, 2) pairs, and two
scores measure how far these sit from ``s_n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Allocation, mix64, parallel_map, splitmix64
from .designs import DesignSpec
from .errors import DomainError

MODES = ("redraw_covariates", "fixed_covariates")


def reference_probability(n: int) -> float:
    return (n - 1) / (2 * n - 1)


@dataclass(frozen=True)
class PairProbEstimate:
    """Same-arm counts for every unordered pair, in ``np.triu_indices(2n, 1)`` order."""

    n: int
    counts: np.ndarray
    replicates: int
    mode: str = "redraw_covariates"

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.replicates

    @property
    def reference(self) -> float:
        return reference_probability(self.n)

    def matrix(self) -> np.ndarray:
        """Symmetric 2n x 2n matrix of estimates (diagonal set to 1)."""
        N = 2 * self.n
        out = np.eye(N)
        iu = np.triu_indices(N, 1)
        out[iu] = self.probs
        out[iu[1], iu[0]] = self.probs
        return out


@dataclass(frozen=True)
class RandomnessReport:
    entropy: float
    deviation: float
    bias_corrected_deviation: float
    reference: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def same_arm_counts(signs: np.ndarray) -> np.ndarray:
    """Same-arm counts per pair from an (r x 2n) matrix of +1/-1 rows."""
    A = np.asarray(signs, dtype=np.int64)
    r, N = A.shape
    G = A.T @ A
    iu = np.triu_indices(N, 1)
    return (G[iu] + r) // 2


def pair_probabilities(allocations: Sequence[Allocation] | np.ndarray, mode: str = "fixed_covariates") -> PairProbEstimate:
    signs = np.array([a.signs if isinstance(a, Allocation) else a for a in allocations])
    r, N = signs.shape
    return PairProbEstimate(N // 2, same_arm_counts(signs), r, mode)


def _redraw_signs(task):
    designer, n, p, dist, master_seed, start, stop, fixed_x = task
    from .simharness import generate_covariates

    rows = []
    for k in range(start, stop):
        rep = mix64(master_seed, k)
        x = fixed_x if fixed_x is not None else generate_covariates(dist, n, p, mix64(rep, 0))
        rows.append(designer(x, mix64(rep, 1)).allocation.signs)
    return same_arm_counts(np.array(rows))


def estimate_pair_probabilities(designer: DesignSpec, n: int, p: int, dist: str, r: int,
                                master_seed: int, mode: str = "redraw_covariates",
                                workers: Optional[int] = 1, chunk: int = 250) -> PairProbEstimate:
    """Monte Carlo co-assignment probabilities for a design method.

    Replicate ``k`` uses seed ``mix64(master_seed, k)``; in redraw mode it
    also draws fresh covariates.  In fixed mode the covariates are drawn once
    from ``splitmix64(master_seed)``.  Partial counts are integers, so the
    merge is exact regardless of worker count.
    """
    from .simharness import generate_covariates

    if r < 2:
        raise DomainError(f"need at least 2 replicates, got {r}")
    if mode in ("redraw", "fixed"):
        mode = mode + "_covariates"
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}; choose from {MODES}")
    fixed_x = generate_covariates(dist, n, p, splitmix64(master_seed)) if mode == "fixed_covariates" else None
    tasks = [(designer, n, p, dist, master_seed, s, min(s + chunk, r), fixed_x) for s in range(0, r, chunk)]
    parts = parallel_map(_redraw_signs, tasks, workers)
    counts = np.sum(parts, axis=0)
    return PairProbEstimate(n, counts, r, mode)


def entropy_score(probs, reference: float) -> float:
    """Mean binary entropy of ``probs`` relative to that of ``reference`` (0 ln 0 = 0)."""
    q = np.asarray(probs, dtype=float)
    return float(_neg_entropy(q).mean() / _neg_entropy(np.array([reference]))[0])


def _neg_entropy(q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(q > 0, q * np.log(q), 0.0)
        b = np.where(q < 1, (1 - q) * np.log1p(-q), 0.0)
    return a + b


def spread_score(probs) -> float:
    """Twice the sample standard deviation of ``probs`` (scales a 0/1 pattern to about 1)."""
    return float(2.0 * np.std(np.asarray(probs, dtype=float), ddof=1))


def entropy_metric(est: PairProbEstimate) -> float:
    return entropy_score(est.probs, est.reference)


def deviation_metric(est: PairProbEstimate, bias_correct: bool = False) -> float:
    """Scaled root sum of squared deviations of ``p_s`` from ``s_n``; 1 for a deterministic design.

    With ``bias_correct`` the Monte Carlo variance ``p(1-p)/(r-1)`` of each
    estimate is subtracted and the corrected sum is floored at 0.
    """
    n = est.n
    if n < 2:
        raise DomainError("deviation metric needs n >= 2")
    q = est.probs
    ss = float(((q - est.reference) ** 2).sum())
    if bias_correct:
        ss = max(ss - float((q * (1 - q)).sum()) / (est.replicates - 1), 0.0)
    return float(np.sqrt((2 * n - 1) / (n - 1) * ss) / n)


def randomness_report(est: PairProbEstimate) -> RandomnessReport:
    return RandomnessReport(
        entropy=entropy_metric(est),
        deviation=deviation_metric(est),
        bias_corrected_deviation=deviation_metric(est, bias_correct=True),
        reference=est.reference,
    )


def matched_pairs_deviation(n: int) -> float:
    """Deviation metric of sorted matched pairs: p_s = 0 within pairs, 1/2 across."""
    return 1.0 / np.sqrt(2.0 * n)
