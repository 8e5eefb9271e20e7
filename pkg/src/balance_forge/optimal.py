"""Exhaustive search for the minimum-balance allocation.

The treated set is enumerated as combinations of subject indices.  Free
subjects are split into a prefix and a suffix; for each count ``j`` taken
from the prefix, every pairing of a prefix j-combination with a suffix
(k-j)-combination is scored at once by broadcasting their column sums.
Blocks are independent tasks, so any number of workers gives the same
answer after the deterministic merge (smallest balance, then smallest
lexicographic rank).
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .balance import BalanceObjective
from .core import Allocation, StandardizedCovariates, default_workers
from .errors import TooLarge

log = logging.getLogger(__name__)

MAX_SUBJECTS = 30
BLOCK_CELLS = 1 << 21


@dataclass
class OptimalResult:
    allocation: Allocation
    balance: float
    visited: int
    rank: int
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "allocation": self.allocation.tolist(),
            "balance": float(self.balance),
            "visited": int(self.visited),
            "rank": int(self.rank),
            "wall_time": float(self.wall_time),
        }


def combination_rank(combo, N: int) -> int:
    """Lexicographic rank of a sorted k-subset of range(N) (combinatorial number system)."""
    k = len(combo)
    rank = 0
    prev = -1
    for i, c in enumerate(combo):
        for v in range(prev + 1, c):
            rank += math.comb(N - 1 - v, k - 1 - i)
        prev = c
    return rank


def _combo_table(indices, j):
    if j == 0:
        return np.zeros((1, 0), dtype=np.int64)
    combos = np.array(list(itertools.combinations(indices, j)), dtype=np.int64)
    return combos.reshape(-1, j)


def _score_block(task):
    (obj, n, base, total, pre_sums, suf_sums, lo, hi, tol) = task
    p = base.shape[0]
    rows = pre_sums[lo:hi]
    if obj.kind == "mahalanobis":
        acc = np.zeros((rows.shape[0], suf_sums.shape[0]))
        for k in range(p):
            t = 2.0 * (base[k] + rows[:, k, None] + suf_sums[None, :, k]) - total[k]
            acc += t * t
        vals = acc / (2.0 * n)
    else:
        w = obj.column_weights(p)
        acc = np.zeros((rows.shape[0], suf_sums.shape[0]))
        for k in range(p):
            acc += w[k] * np.abs(2.0 * (base[k] + rows[:, k, None] + suf_sums[None, :, k]) - total[k])
        vals = acc / n
    flat = vals.ravel()
    m = float(flat.min())
    near = np.flatnonzero(flat <= m + tol)
    cols = suf_sums.shape[0]
    return m, [(float(flat[q]), lo + q // cols, q % cols) for q in near], flat.size


def enumerate_optimal(z: StandardizedCovariates, obj: BalanceObjective, workers: Optional[int] = None,
                      symmetry: bool = True, force: bool = False) -> OptimalResult:
    """Globally minimal allocation by complete enumeration.

    With ``symmetry`` subject 0 is fixed to treatment, halving the search
    (an allocation and its sign flip have identical balance).
    """
    N = z.rows
    n = z.n
    if N > MAX_SUBJECTS:
        if not force:
            raise TooLarge(f"{N} subjects exceeds the enumeration cap of {MAX_SUBJECTS}; use greedy")
        log.warning("enumerating %d subjects; this may take very long", N)
    workers = default_workers() if workers is None else max(1, workers)
    start = time.perf_counter()

    zt = obj.transform(z.z)
    total = zt.sum(axis=0)
    tol = obj.tie_tolerance(zt)
    if symmetry:
        fixed = [0]
        free = list(range(1, N))
        k = n - 1
    else:
        fixed = []
        free = list(range(N))
        k = n
    base = zt[fixed].sum(axis=0) if fixed else np.zeros(zt.shape[1])
    h = len(free) // 2
    prefix, suffix = free[:h], free[h:]

    tasks, meta = [], []
    for j in range(max(0, k - len(suffix)), min(k, len(prefix)) + 1):
        pre = _combo_table(prefix, j)
        suf = _combo_table(suffix, k - j)
        pre_sums = zt[pre].sum(axis=1) if j else np.zeros((1, zt.shape[1]))
        suf_sums = zt[suf].sum(axis=1) if k - j else np.zeros((1, zt.shape[1]))
        step = max(1, BLOCK_CELLS // suf_sums.shape[0])
        for lo in range(0, pre_sums.shape[0], step):
            hi = min(lo + step, pre_sums.shape[0])
            tasks.append((obj, n, base, total, pre_sums, suf_sums, lo, hi, tol))
            meta.append((pre, suf))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(_score_block, tasks))
    else:
        outs = [_score_block(t) for t in tasks]

    visited = sum(o[2] for o in outs)
    best_val = min(o[0] for o in outs)
    best = None
    for (m, near, _), (pre, suf) in zip(outs, meta):
        for val, r, c in near:
            if val > best_val + tol:
                continue
            combo = sorted(fixed + pre[r].tolist() + suf[c].tolist())
            rank = combination_rank(combo, N)
            if best is None or rank < best[1]:
                best = (combo, rank)
    combo, rank = best
    alloc = Allocation.from_treated(combo, N)
    return OptimalResult(alloc, obj.evaluate(z, alloc), visited, rank, time.perf_counter() - start)


def naive_optimal(z: StandardizedCovariates, obj: BalanceObjective, symmetry: bool = True) -> OptimalResult:
    """Single-threaded reference enumerator: itertools order, direct evaluation."""
    N = z.rows
    n = z.n
    zt = obj.transform(z.z)
    tol = obj.tie_tolerance(zt)
    values = []
    combos = []
    for combo in itertools.combinations(range(N), n):
        if symmetry and combo[0] != 0:
            break
        combos.append(combo)
        values.append(obj.evaluate(z, Allocation.from_treated(combo, N)))
    values = np.array(values)
    m = values.min()
    first = int(np.flatnonzero(values <= m + tol)[0])
    alloc = Allocation.from_treated(combos[first], N)
    return OptimalResult(alloc, float(values[first]), len(combos), first)
