import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from balance_forge.balance import BalanceObjective, make_objective
from balance_forge.core import Allocation, mix64, random_balanced_allocation, standardize
from balance_forge.designs import greedy_design
from balance_forge.errors import TooLarge
from balance_forge.optimal import combination_rank, enumerate_optimal, naive_optimal
from balance_forge.simharness import generate_covariates

L1 = BalanceObjective("l1")


def _z(n, p, seed, dist="normal"):
    return standardize(generate_covariates(dist, n, p, seed))


def test_combination_rank_matches_itertools():
    for N, k in ((6, 3), (7, 2), (8, 4)):
        for r, combo in enumerate(itertools.combinations(range(N), k)):
            assert combination_rank(combo, N) == r


def test_two_subjects():
    z = standardize(np.array([0.4, 1.9]))
    res = enumerate_optimal(z, L1, workers=1)
    assert res.visited == 1
    assert math.isclose(res.balance, abs(z.z[0, 0] - z.z[1, 0]), rel_tol=1e-12)


def test_four_subject(four):
    _, z = four
    res = enumerate_optimal(z, L1, workers=1)
    assert res.balance < 1e-15
    assert res.allocation in (Allocation.from_treated([0, 3], 4), Allocation.from_treated([1, 2], 4))
    assert res.visited == 3
    assert enumerate_optimal(z, L1, workers=1, symmetry=False).visited == 6


@pytest.mark.parametrize("n", [3, 5, 7])
def test_visited_counts(n):
    z = _z(n, 1, n)
    assert enumerate_optimal(z, L1, workers=1).visited == math.comb(2 * n, n) // 2
    assert enumerate_optimal(z, L1, workers=1, symmetry=False).visited == math.comb(2 * n, n)


def test_cap():
    z = _z(16, 1, 0)
    with pytest.raises(TooLarge):
        enumerate_optimal(z, L1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 40), st.integers(1, 6), st.integers(1, 3),
       st.sampled_from(["l1", "weighted-l1", "mahalanobis"]), st.booleans())
def test_matches_naive(seed, n, p, kind, symmetry):
    if kind == "mahalanobis" and 2 * n <= p + 1:
        return
    z = _z(n, p, seed)
    obj = make_objective(kind, z, np.arange(1.0, p + 1) if kind == "weighted-l1" else None)
    fast = enumerate_optimal(z, obj, workers=1, symmetry=symmetry)
    ref = naive_optimal(z, obj, symmetry=symmetry)
    assert fast.allocation == ref.allocation
    assert fast.rank == ref.rank
    assert fast.visited == ref.visited
    assert fast.balance == ref.balance


def test_ties_pick_smallest_rank():
    # symmetric data: many exact optima; lexicographically first wins
    z = standardize(np.array([-3.0, -1.0, 1.0, 3.0, -2.0, 2.0]))
    res = enumerate_optimal(z, L1, workers=2, symmetry=False)
    ref = naive_optimal(z, L1, symmetry=False)
    assert res.rank == ref.rank and res.allocation == ref.allocation


def test_worker_invariance(monkeypatch):
    import balance_forge.optimal as opt

    monkeypatch.setattr(opt, "BLOCK_CELLS", 64)
    z = _z(7, 2, 5)
    outs = [enumerate_optimal(z, L1, workers=w) for w in (1, 2, 8)]
    assert len({(o.allocation, o.rank, o.balance, o.visited) for o in outs}) == 1


def test_optimal_below_greedy_below_random():
    for t in range(20):
        z = _z(6, 1, mix64(1, t))
        opt = enumerate_optimal(z, L1, workers=1)
        g = greedy_design(z, L1, t)
        r = L1.evaluate(z, g.allocation) if g.switches == 0 else g.initial_balance
        assert opt.balance <= g.final_balance <= r
        assert opt.balance <= L1.evaluate(z, random_balanced_allocation(6, t + 99))
