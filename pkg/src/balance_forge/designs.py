"""Allocation-producing design methods.

Greedy pair-switching starts from a complete randomization and repeatedly
applies the treated <-> control swap with the smallest post-swap balance,
stopping as soon as the best swap no longer strictly lowers the balance.
Candidate swaps are scored through the per-column arm differences: swapping
treated ``i`` with control ``j`` changes ``d`` by ``2 (z_j - z_i)``, so one
sweep over all n^2 swaps costs O(n^2 p).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .balance import BalanceObjective, make_objective
from .core import (
    Allocation,
    CovariateMatrix,
    DesignResult,
    StandardizedCovariates,
    mix64,
    parallel_map,
    random_balanced_allocation,
    rng_from_seed,
    standardize,
)
from .errors import DomainError, ShapeError, ThresholdNotMet

METHODS = (
    "random",
    "greedy",
    "greedy-restarts",
    "greedy-restricted",
    "greedy-stratified",
    "matched",
    "rerand-best",
    "rerand-threshold",
)
GREEDY_METHODS = ("greedy", "greedy-restarts", "greedy-restricted", "greedy-stratified")


def _swap_scores(obj: BalanceObjective, d: np.ndarray, zt_T: np.ndarray, zt_C: np.ndarray, n: int) -> np.ndarray:
    """Objective after each swap, as an (i treated) x (j control) matrix."""
    base = d[None, :] - 2.0 * zt_T  # n x p
    add = 2.0 * zt_C
    p = d.shape[0]
    if obj.kind == "mahalanobis":
        acc = np.zeros((zt_T.shape[0], zt_C.shape[0]))
        for k in range(p):
            t = base[:, k, None] + add[None, :, k]
            acc += t * t
        return acc / (2.0 * n)
    w = obj.column_weights(p)
    if p == 1:
        return np.abs(base[:, 0, None] + add[None, :, 0]) * (w[0] / n)
    acc = np.zeros((zt_T.shape[0], zt_C.shape[0]))
    for k in range(p):
        acc += w[k] * np.abs(base[:, k, None] + add[None, :, k])
    return acc / n


def _greedy_core(zt, signs, obj, n, eligible=None, stop=None, record_trace=True):
    """Greedy sweeps on transformed rows ``zt``; mutates ``signs`` in place.

    ``eligible`` restricts swaps to a boolean mask of subjects.  ``stop`` is
    called with the current arm differences before each sweep; when it
    returns True exactly one more improving swap is allowed.
    """
    tol = obj.tie_tolerance(zt)
    d = zt[signs == 1].sum(axis=0) - zt[signs == -1].sum(axis=0)
    current = float(obj.reduce(d, n))
    trace = [] if record_trace else None
    switches = 0
    last_round = False
    while True:
        if stop is not None and not last_round and stop(d):
            last_round = True
        T = np.flatnonzero(signs == 1)
        C = np.flatnonzero(signs == -1)
        if eligible is not None:
            T = T[eligible[T]]
            C = C[eligible[C]]
            if T.size == 0 or C.size == 0:
                break
        scores = _swap_scores(obj, d, zt[T], zt[C], n)
        flat = scores.ravel()
        # T and C are ascending, so the first near-minimal entry in row-major
        # order is the lexicographically smallest (treated, control) pair.
        k = int(np.flatnonzero(flat <= flat.min() + tol)[0])
        i, j = T[k // C.size], C[k % C.size]
        signs[i], signs[j] = -1, 1
        new_d = zt[signs == 1].sum(axis=0) - zt[signs == -1].sum(axis=0)
        new = float(obj.reduce(new_d, n))
        if not new < current:
            signs[i], signs[j] = 1, -1
            break
        d, current = new_d, new
        switches += 1
        if record_trace:
            trace.append((int(i), int(j), new))
        if last_round:
            break
    return current, switches, trace


def greedy_pair_switch(z: StandardizedCovariates, init: Allocation, obj: BalanceObjective,
                       seed: int = 0, record_trace: bool = True) -> DesignResult:
    """Run greedy pair-switching from ``init`` until no swap strictly improves balance.

    Returns a ``DesignResult`` whose ``trace`` lists ``(treated, control,
    balance_after)`` for every applied swap.
    """
    if init.size != z.rows:
        raise ShapeError(f"allocation of length {init.size} for {z.rows} subjects")
    signs = init.signs.astype(np.int8).copy()
    zt = obj.transform(z.z)
    initial = obj.evaluate(z, init)
    final, switches, trace = _greedy_core(zt, signs, obj, z.n, record_trace=record_trace)
    alloc = Allocation(signs)
    final = obj.evaluate(z, alloc) if switches else initial
    return DesignResult(alloc, "greedy", initial, final, switches, seed, obj.tag, trace=trace)


def greedy_design(z: StandardizedCovariates, obj: BalanceObjective, seed: int,
                  record_trace: bool = False) -> DesignResult:
    """Greedy pair-switching from a complete randomization drawn with ``seed``."""
    init = random_balanced_allocation(z.n, seed)
    return greedy_pair_switch(z, init, obj, seed=seed, record_trace=record_trace)


def greedy_restarts(z: StandardizedCovariates, obj: BalanceObjective, restarts: int,
                    master_seed: int) -> DesignResult:
    """Best of ``restarts`` greedy runs with seeds ``mix64(master_seed, k)``."""
    if restarts < 1:
        raise DomainError(f"restarts must be >= 1, got {restarts}")
    best = None
    for k in range(restarts):
        res = greedy_design(z, obj, mix64(master_seed, k))
        if best is None or res.final_balance < best[1].final_balance:
            best = (k, res)
    k, res = best
    res.method = "greedy-restarts"
    res.info = {"replicate": k, "replicate_seed": res.seed, "restarts": restarts}
    res.seed = master_seed
    return res


def greedy_restricted(z: StandardizedCovariates, b: float = 2.0, c_thresh: float = 1.0,
                      seed: int = 0) -> DesignResult:
    """Greedy switching confined to the extreme set of one covariate.

    The extreme set holds the ``ceil(b sqrt(n))`` largest and smallest
    subjects.  Swaps inside it continue until the arm-sum difference drops
    below ``c_thresh``; then one further best swap is made.  Subjects outside
    the extreme set keep their initial random assignment.
    """
    if z.p != 1:
        raise ShapeError(f"restricted greedy needs exactly one covariate, got {z.p}")
    n = z.n
    k = math.ceil(b * math.sqrt(n))
    if b <= 0 or 2 * k > n:
        raise DomainError(f"extreme set of size {2 * k} exceeds arm capacity {n}")
    order = np.argsort(z.z[:, 0], kind="stable")
    eligible = np.zeros(z.rows, dtype=bool)
    eligible[order[:k]] = True
    eligible[order[-k:]] = True

    obj = BalanceObjective("l1")
    init = random_balanced_allocation(n, seed)
    signs = init.signs.astype(np.int8).copy()
    initial = obj.evaluate(z, init)
    _, switches, trace = _greedy_core(
        z.z, signs, obj, n, eligible=eligible,
        stop=lambda d: abs(float(d[0])) < c_thresh,
    )
    alloc = Allocation(signs)
    final = obj.evaluate(z, alloc) if switches else initial
    return DesignResult(alloc, "greedy-restricted", initial, final, switches, seed, obj.tag,
                        trace=trace, info={"extreme_set": np.flatnonzero(eligible).tolist(),
                                           "b": b, "c_thresh": c_thresh})


def greedy_stratified(z: StandardizedCovariates, strata, kind: str = "l1", seed: int = 0,
                      weights=None) -> DesignResult:
    """Independent greedy runs inside each stratum (re-standardized within the stratum).

    Strata are processed in sorted label order; stratum ``k`` draws its
    initial allocation with seed ``mix64(seed, k)``.  Reported balances and
    switches are sums over strata.
    """
    strata = list(strata) if strata is not None else ["all"] * z.rows
    if len(strata) != z.rows:
        raise ShapeError(f"{len(strata)} stratum labels for {z.rows} subjects")
    groups: dict = {}
    for i, s in enumerate(strata):
        groups.setdefault(s, []).append(i)
    for label, idx in groups.items():
        if len(idx) % 2:
            raise ShapeError(f"stratum {label!r} has odd size {len(idx)}")
    signs = np.zeros(z.rows, dtype=np.int8)
    initial = final = 0.0
    switches = 0
    per = []
    for k, label in enumerate(sorted(groups)):
        idx = np.array(groups[label])
        sub = z.subset(idx)
        obj = make_objective(kind, sub, weights)
        res = greedy_design(sub, obj, mix64(seed, k))
        signs[idx] = res.allocation.signs
        initial += res.initial_balance
        final += res.final_balance
        switches += res.switches
        per.append({"stratum": label, "size": int(idx.size), "initial_balance": res.initial_balance,
                    "final_balance": res.final_balance, "switches": res.switches})
    return DesignResult(Allocation(signs), "greedy-stratified", initial, final, switches, seed,
                        kind, info={"strata": per})


def matched_pairs(x, seed: int, obj: Optional[BalanceObjective] = None) -> DesignResult:
    """Sort descending, pair neighbours, and split each pair by a fair coin."""
    values = x.values if isinstance(x, CovariateMatrix) else np.asarray(x, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[1] != 1:
        raise ShapeError(f"matched pairs needs exactly one covariate, got {values.shape[1]}")
    rows = values.shape[0]
    order = np.argsort(-values[:, 0], kind="stable")
    coins = rng_from_seed(seed).integers(0, 2, size=rows // 2)
    signs = np.empty(rows, dtype=np.int8)
    first, second = order[0::2], order[1::2]
    signs[first] = np.where(coins == 1, 1, -1)
    signs[second] = -signs[first]
    alloc = Allocation(signs)
    z = standardize(values)
    obj = obj or BalanceObjective("l1")
    b = obj.evaluate(z, alloc)
    return DesignResult(alloc, "matched", b, b, 0, seed, obj.tag,
                        info={"pairs": np.stack([first, second], axis=1).tolist()})


def default_threshold(obj: BalanceObjective, z: StandardizedCovariates, accept: float = 0.01) -> float:
    """Threshold whose chi-square acceptance probability is ``accept``.

    Defined for the Mahalanobis objective and for one-covariate L1 objectives
    (where ``Q = (n/2) B^2``).
    """
    q = float(stats.chi2.ppf(accept, z.p))
    if obj.kind == "mahalanobis":
        return q
    if z.p == 1:
        w = float(obj.column_weights(1)[0])
        return w * math.sqrt(2.0 * q / z.n)
    raise DomainError("no default threshold for an L1 objective with p > 1; pass one explicitly")


def rerandomize(z: StandardizedCovariates, obj: BalanceObjective, mode: str = "best_of_R",
                R: Optional[int] = None, a: Optional[float] = None, seed: int = 0,
                max_attempts: int = 10 ** 6) -> DesignResult:
    """Rerandomization: keep the best of R complete randomizations, or redraw until below ``a``.

    Draw ``k`` uses seed ``mix64(seed, k)``.
    """
    if mode == "best_of_R":
        if R is None or R < 1:
            raise DomainError(f"best_of_R needs R >= 1, got {R}")
        best = None
        for k in range(R):
            alloc = random_balanced_allocation(z.n, mix64(seed, k))
            b = obj.evaluate(z, alloc)
            if best is None or b < best[1]:
                best = (alloc, b, k)
        alloc, b, k = best
        return DesignResult(alloc, "rerand-best", b, b, 0, seed, obj.tag,
                            info={"R": R, "draw": k})
    if mode == "threshold":
        if a is None:
            a = default_threshold(obj, z)
        if not a > 0:
            raise DomainError(f"threshold must be > 0, got {a}")
        if max_attempts < 1:
            raise DomainError(f"max_attempts must be >= 1, got {max_attempts}")
        best = None
        for k in range(max_attempts):
            alloc = random_balanced_allocation(z.n, mix64(seed, k))
            b = obj.evaluate(z, alloc)
            if best is None or b < best[1]:
                best = (alloc, b)
            if b < a:
                return DesignResult(alloc, "rerand-threshold", b, b, 0, seed, obj.tag,
                                    info={"threshold": a, "attempts": k + 1})
        alloc, b = best
        raise ThresholdNotMet(
            f"no draw below {a:.6g} in {max_attempts} attempts (best {b:.6g})",
            best=DesignResult(alloc, "rerand-threshold", b, b, 0, seed, obj.tag,
                              info={"threshold": a, "attempts": max_attempts}),
            attempts=max_attempts,
        )
    raise DomainError(f"unknown rerandomization mode {mode!r}")


def random_design(z: StandardizedCovariates, obj: BalanceObjective, seed: int) -> DesignResult:
    alloc = random_balanced_allocation(z.n, seed)
    b = obj.evaluate(z, alloc)
    return DesignResult(alloc, "random", b, b, 0, seed, obj.tag)


@dataclass(frozen=True)
class DesignSpec:
    """A design method plus its parameters, callable on (covariates, seed).

    Picklable, so replicate loops can ship it to worker processes.
    """

    method: str = "greedy"
    objective: str = "l1"
    weights: Optional[tuple] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def __call__(self, x: CovariateMatrix, seed: int, z: Optional[StandardizedCovariates] = None) -> DesignResult:
        return run_design(self.method, x, seed, objective=self.objective, weights=self.weights,
                          z=z, **self.params)

    def __hash__(self):
        return hash((self.method, self.objective, self.weights, tuple(sorted(self.params.items()))))


def run_design(method: str, x: CovariateMatrix, seed: int, objective: str = "l1", weights=None,
               z: Optional[StandardizedCovariates] = None, restarts: int = 20, b: float = 2.0,
               c_thresh: float = 1.0, R: int = 100, threshold: Optional[float] = None,
               max_attempts: int = 10 ** 6) -> DesignResult:
    """Dispatch to a design method by name."""
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; choose from {METHODS}")
    if z is None:
        z = standardize(x)
    if method == "greedy-stratified":
        return greedy_stratified(z, x.strata, objective, seed, weights)
    if method == "greedy-restricted":
        if objective != "l1":
            raise DomainError("greedy-restricted supports only the l1 objective")
        return greedy_restricted(z, b, c_thresh, seed)
    obj = make_objective(objective, z, weights)
    if method == "random":
        return random_design(z, obj, seed)
    if method == "greedy":
        return greedy_design(z, obj, seed)
    if method == "greedy-restarts":
        return greedy_restarts(z, obj, restarts, seed)
    if method == "matched":
        return matched_pairs(x, seed, obj)
    if method == "rerand-best":
        return rerandomize(z, obj, "best_of_R", R=R, seed=seed)
    return rerandomize(z, obj, "threshold", a=threshold, seed=seed, max_attempts=max_attempts)


def design_balance(result_method: str, x: CovariateMatrix, allocation: Allocation, objective: str = "l1",
                   weights=None) -> float:
    """Recompute the reported final balance of an allocation from raw covariates."""
    z = standardize(x)
    if result_method == "greedy-stratified":
        groups = x.check_strata()
        total = 0.0
        for label in sorted(groups):
            idx = groups[label]
            sub = z.subset(idx)
            total += make_objective(objective, sub, weights).evaluate(sub, allocation.signs[idx])
        return total
    return make_objective(objective, z, weights).evaluate(z, allocation)


def _replicate(task):
    spec, x, seed = task
    return spec(x, seed)


def replicate_designs(spec: DesignSpec, x: CovariateMatrix, seeds, workers: Optional[int] = 1) -> list:
    """Run ``spec`` once per seed on fixed covariates; order follows ``seeds``."""
    z = standardize(x)
    if workers is not None and workers <= 1:
        return [spec(x, s, z=z) for s in seeds]
    return parallel_map(_replicate, [(spec, x, s) for s in seeds], workers)
