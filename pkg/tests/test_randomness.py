import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from balance_forge.core import random_balanced_allocation
from balance_forge.designs import DesignSpec
from balance_forge.errors import DomainError
from balance_forge.randomness import (
    PairProbEstimate,
    deviation_metric,
    entropy_metric,
    entropy_score,
    estimate_pair_probabilities,
    matched_pairs_deviation,
    pair_probabilities,
    randomness_report,
    reference_probability,
    same_arm_counts,
    spread_score,
)


def _const(n, value, r=1000):
    m = math.comb(2 * n, 2)
    return PairProbEstimate(n, np.full(m, value * r), r)


def test_reference():
    assert reference_probability(5) == 4 / 9


def test_same_arm_counts_direct():
    rng = np.random.default_rng(0)
    A = np.array([random_balanced_allocation(4, int(s)).signs for s in rng.integers(0, 2 ** 62, 50)])
    got = same_arm_counts(A)
    iu = np.triu_indices(8, 1)
    want = [(A[:, i] == A[:, j]).sum() for i, j in zip(*iu)]
    np.testing.assert_array_equal(got, want)


def test_complete_randomization_n5():
    r = 100_000
    est = estimate_pair_probabilities(DesignSpec("random"), 5, 1, "normal", r, 3, chunk=5000)
    sn = 4 / 9
    se = math.sqrt(sn * (1 - sn) / r)
    assert np.all(np.abs(est.probs - sn) < 3.5 * se)
    assert est.probs.size == math.comb(10, 2)


def test_matched_fixed_mode_zero_within_pairs():
    est = estimate_pair_probabilities(DesignSpec("matched"), 8, 1, "normal", 500, 4, mode="fixed")
    M = est.matrix()
    assert (np.isclose(M, 0)).sum() == 2 * 8


def test_deterministic_design():
    a = random_balanced_allocation(6, 1)
    est = pair_probabilities([a] * 30)
    assert set(np.unique(est.probs)) <= {0.0, 1.0}
    assert entropy_metric(est) == 0.0
    assert math.isclose(deviation_metric(est), 1.0, rel_tol=1e-12)


@pytest.mark.parametrize("n", [2, 5, 30])
def test_exact_reference_metrics(n):
    est = PairProbEstimate(n, np.full(math.comb(2 * n, 2), float(n - 1)), 2 * n - 1)
    assert math.isclose(entropy_metric(est), 1.0, rel_tol=1e-12)
    assert deviation_metric(est) < 1e-12


@pytest.mark.parametrize("n", [2, 3, 10, 50])
def test_deterministic_pattern_closed_form(n):
    # n(n-1) same-arm pairs, n^2 cross pairs
    probs = np.concatenate([np.ones(n * (n - 1)), np.zeros(n * n)])
    est = PairProbEstimate(n, probs, 1)
    ss = ((probs - reference_probability(n)) ** 2).sum()
    assert math.isclose(ss, n * n * (n - 1) / (2 * n - 1), rel_tol=1e-12)
    assert math.isclose(deviation_metric(est), 1.0, rel_tol=1e-12)


def test_counterexample_scores():
    p, q = (0.3, 0.3, 0.9), (0.153, 0.5, 0.847)
    assert abs(entropy_score(p, 0.5) - 0.744) < 1e-3
    assert abs(spread_score(p) - 0.693) < 1e-3
    assert abs(entropy_score(q, 0.5) - 0.745) < 1e-3
    assert abs(spread_score(q) - 0.694) < 1e-3
    assert entropy_score(q, 0.5) > entropy_score(p, 0.5) and spread_score(q) > spread_score(p)


def test_deviation_n1():
    with pytest.raises(DomainError):
        deviation_metric(PairProbEstimate(1, np.array([0.0]), 10))


def test_too_few_replicates():
    with pytest.raises(DomainError):
        estimate_pair_probabilities(DesignSpec("random"), 5, 1, "normal", 1, 0)


def test_matched_pairs_analytic():
    # p_s = 0 within n pairs, 1/2 elsewhere: sum of squares n(n-1)/(2(2n-1))
    for n in (5, 50, 200):
        N = 2 * n
        probs = np.full(math.comb(N, 2), 0.5)
        probs[:n] = 0.0
        est = PairProbEstimate(n, probs, 1)
        assert math.isclose(deviation_metric(est), matched_pairs_deviation(n), rel_tol=1e-12)


def test_bias_correction_shrinks():
    est = estimate_pair_probabilities(DesignSpec("random"), 20, 1, "normal", 400, 1)
    rep = randomness_report(est)
    assert 0 <= rep.bias_corrected_deviation < rep.deviation


def test_worker_and_chunk_invariance():
    spec = DesignSpec("greedy")
    a = estimate_pair_probabilities(spec, 6, 1, "normal", 60, 9, workers=1, chunk=7)
    b = estimate_pair_probabilities(spec, 6, 1, "normal", 60, 9, workers=2, chunk=25)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_ordering_fixed_covariates():
    rep = {}
    for m in ("random", "greedy", "matched"):
        est = estimate_pair_probabilities(DesignSpec(m), 50, 1, "normal", 1000, 21, mode="fixed")
        rep[m] = randomness_report(est)
    det = pair_probabilities([random_balanced_allocation(50, 0)] * 10)
    E = [rep["random"].entropy, rep["greedy"].entropy, rep["matched"].entropy, entropy_metric(det)]
    D = [rep["random"].deviation, rep["greedy"].deviation, rep["matched"].deviation, deviation_metric(det)]
    assert E == sorted(E, reverse=True)
    assert D == sorted(D)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(2, 8))
def test_relabeling_invariance(seed, n):
    rng = np.random.default_rng(seed)
    A = np.array([random_balanced_allocation(n, int(s)).signs for s in rng.integers(0, 2 ** 62, 7)])
    perm = rng.permutation(2 * n)
    a, b = pair_probabilities(A), pair_probabilities(A[:, perm])
    assert math.isclose(entropy_metric(a), entropy_metric(b), rel_tol=1e-12)
    assert math.isclose(deviation_metric(a), deviation_metric(b), rel_tol=1e-12)
    assert np.all((a.probs >= 0) & (a.probs <= 1))
    assert np.array_equal(a.counts * 1.0, a.probs * a.replicates)
