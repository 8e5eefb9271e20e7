"""Difference-in-means estimation and randomization inference under a design method.

The reference distribution comes from rerunning the design method: each of
R replicate allocations yields a faux estimate on the (null-adjusted)
responses.  Holding one replicate set fixed across hypothesized effects
makes the p-value a step function that is nonincreasing on each side of
the estimate, so the confidence set is an interval located by bisection.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .core import (
    Allocation,
    CovariateMatrix,
    mix64,
    parallel_map,
    random_balanced_allocation,
    rng_from_seed,
    standardize,
)
from .balance import make_objective
from .designs import DesignSpec, greedy_design
from .errors import BracketError, DomainError, ShapeError


@dataclass(frozen=True)
class ExperimentData:
    x: CovariateMatrix
    y: np.ndarray
    observed: Allocation

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        if y.size != self.x.rows or self.observed.size != self.x.rows:
            raise ShapeError(f"{y.size} responses and {self.observed.size} assignments for {self.x.rows} subjects")
        if not np.all(np.isfinite(y)):
            raise ShapeError("responses must be finite")
        object.__setattr__(self, "y", y)

    @property
    def z(self):
        return standardize(self.x)


@dataclass
class PermutationResult:
    estimate: float
    null_estimates: np.ndarray
    p_value: float
    alpha: float
    R: int
    beta0: float = 0.0
    ci: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {
            "estimate": float(self.estimate),
            "beta0": float(self.beta0),
            "p_value": float(self.p_value),
            "alpha": float(self.alpha),
            "R": int(self.R),
            "ci": [float(v) for v in self.ci] if self.ci is not None else None,
            "null_estimates": [float(v) for v in self.null_estimates],
        }


def diff_in_means(y, a: Allocation | np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    signs = a.signs if isinstance(a, Allocation) else np.asarray(a)
    if y.shape[0] != signs.shape[0]:
        raise ShapeError(f"{y.shape[0]} responses for an allocation of length {signs.shape[0]}")
    return float(y[signs == 1].mean() - y[signs == -1].mean())


def _designs(task):
    spec, x, seeds = task
    z = standardize(x)
    return np.array([spec(x, s, z=z).allocation.signs for s in seeds])


def null_allocations(x: CovariateMatrix, designer: DesignSpec, R: int, master_seed: int,
                     workers: Optional[int] = 1) -> np.ndarray:
    """R replicate allocations (rows of +1/-1) with seeds ``mix64(master_seed, r)``."""
    seeds = [mix64(master_seed, r) for r in range(R)]
    chunk = max(1, math.ceil(R / max(1, workers or 1)))
    parts = parallel_map(_designs, [(designer, x, seeds[i:i + chunk]) for i in range(0, R, chunk)], workers)
    return np.concatenate(parts, axis=0)


def draw_observed(x: CovariateMatrix, designer: DesignSpec, R: int, master_seed: int,
                  workers: Optional[int] = 1):
    """Run the designer R+1 times and hand one replicate, chosen at random, to the experimenter.

    Returns ``(observed, nulls)`` where ``nulls`` holds the other R allocations.
    """
    pool = null_allocations(x, designer, R + 1, master_seed, workers)
    pick = int(rng_from_seed(mix64(master_seed, R + 1)).integers(R + 1))
    return Allocation(pool[pick]), np.delete(pool, pick, axis=0)


class _NullModel:
    """Faux estimates as affine functions of the hypothesized effect."""

    def __init__(self, y, observed: Allocation, nulls: np.ndarray):
        n = observed.n
        w = (observed.signs == 1).astype(float)
        A = np.asarray(nulls, dtype=float)
        self.estimate = diff_in_means(y, observed)
        self.b = A @ y / n
        self.c = A @ w / n

    def null_estimates(self, beta0: float) -> np.ndarray:
        return self.b - beta0 * self.c

    def p_value(self, beta0: float) -> float:
        stat = abs(self.estimate - beta0)
        null = np.abs(self.null_estimates(beta0))
        return (1 + int(np.count_nonzero(null >= stat))) / (self.b.size + 1)


def permutation_p_value(estimate: float, null_estimates) -> float:
    null = np.abs(np.asarray(null_estimates, dtype=float))
    return (1 + int(np.count_nonzero(null >= abs(estimate)))) / (null.size + 1)


def permutation_test(data: ExperimentData, R: int, designer: DesignSpec, master_seed: int,
                     beta0: float = 0.0, alpha: float = 0.05, nulls: Optional[np.ndarray] = None,
                     workers: Optional[int] = 1) -> PermutationResult:
    """Two-sided randomization test of the sharp null ``effect = beta0``."""
    if R < 19:
        warnings.warn(f"R={R} cannot reach the 0.05 level; use R >= 19", stacklevel=2)
    if nulls is None:
        nulls = null_allocations(data.x, designer, R, master_seed, workers)
    model = _NullModel(data.y, data.observed, nulls)
    return PermutationResult(model.estimate, model.null_estimates(beta0), model.p_value(beta0),
                             alpha, len(nulls), beta0)


def invert_ci(data: ExperimentData, R: int, designer: DesignSpec, alpha: float = 0.05,
              master_seed: int = 0, tol: Optional[float] = None, span: float = 10.0,
              nulls: Optional[np.ndarray] = None, workers: Optional[int] = 1) -> tuple:
    """Confidence interval ``{beta0 : p(beta0) > alpha}`` by bisection on each side.

    Endpoints are located to ``tol`` (default 1e-3 sd(y)) and reported on the
    rejected side, so the interval covers the acceptance set.
    """
    if not 0 < alpha < 0.5:
        raise DomainError(f"alpha must lie in (0, 0.5), got {alpha}")
    if nulls is None:
        nulls = null_allocations(data.x, designer, R, master_seed, workers)
    model = _NullModel(data.y, data.observed, nulls)
    sd = float(np.std(data.y, ddof=1)) or 1.0
    tol = 1e-3 * sd if tol is None else tol
    est = model.estimate

    def edge(direction):
        step = 0.25 * sd
        inside = est
        while True:
            outside = est + direction * step
            if model.p_value(outside) <= alpha:
                break
            inside = outside
            if step >= span * sd:
                raise BracketError(f"no rejection within {span} sd of the estimate")
            step = min(2 * step, span * sd)
        while abs(outside - inside) > tol:
            mid = 0.5 * (inside + outside)
            if model.p_value(mid) > alpha:
                inside = mid
            else:
                outside = mid
        return outside

    return edge(-1.0), edge(1.0)


# -- simulation studies --------------------------------------------------------

RESPONSES = {
    "zero": lambda x: np.zeros_like(x),
    "linear": lambda x: x,
    "quadratic": lambda x: x ** 2,
    "sinusoid": lambda x: np.sin(2.0 * x),
}


def _response_fn(f: str):
    try:
        return RESPONSES[f]
    except KeyError:
        raise DomainError(f"unknown response function {f!r}; choose from {tuple(RESPONSES)}") from None


def simulate_experiment(n: int, seed: int, beta: float = 0.0, f: str = "zero", noise_sd: float = 1.0,
                        dist: str = "normal", designer: DesignSpec = DesignSpec("greedy"), R: int = 99):
    """One simulated experiment: covariates, R+1 designs, responses under the drawn allocation."""
    from .simharness import generate_covariates

    x = generate_covariates(dist, n, 1, mix64(seed, 0))
    observed, nulls = draw_observed(x, designer, R, mix64(seed, 1))
    eps = rng_from_seed(mix64(seed, 2)).standard_normal(2 * n) * noise_sd
    y0 = _response_fn(f)(x.values[:, 0]) + eps
    y = y0 + beta * (observed.signs == 1)
    return ExperimentData(x, y, observed), nulls


def _level_task(task):
    n, seed, R, alphas = task
    data, nulls = simulate_experiment(n, seed, R=R)
    p = permutation_test(data, R, None, 0, nulls=nulls).p_value
    return [p <= a for a in alphas]


def null_rejection_rates(n: int = 20, R: int = 99, sims: int = 1000, alphas=(0.01, 0.05, 0.10),
                         seed: int = 0, workers: Optional[int] = 1) -> dict:
    """Rejection rates of the sharp null on pure-noise responses under greedy designs."""
    tasks = [(n, mix64(seed, k), R, tuple(alphas)) for k in range(sims)]
    hits = np.array(parallel_map(_level_task, tasks, workers))
    return {a: float(hits[:, i].mean()) for i, a in enumerate(alphas)}


def _coverage_task(task):
    n, seed, R, alpha, beta = task
    data, nulls = simulate_experiment(n, seed, beta=beta, f="linear", R=R)
    lo, hi = invert_ci(data, R, None, alpha, nulls=nulls)
    return lo <= beta <= hi


def ci_coverage(n: int = 25, R: int = 99, sims: int = 500, alpha: float = 0.05, beta: float = 1.0,
                seed: int = 0, workers: Optional[int] = 1) -> float:
    """Empirical coverage of the inverted interval on ``y = beta * treated + x + noise``."""
    tasks = [(n, mix64(seed, k), R, alpha, beta) for k in range(sims)]
    return float(np.mean(parallel_map(_coverage_task, tasks, workers)))


def _exact_bound_holds(initial: float, final: float, switches: int, n: int, y_range: float) -> bool:
    return abs(Fraction(initial) - Fraction(final)) <= Fraction(2, n) * switches * Fraction(y_range)


def consistency_runs(f: str, dist: str, n: int, r: int, seed: int, beta: float = 1.0,
                     noise_sd: float = 1.0) -> list:
    """Per-run greedy vs initial-randomization estimates and the switched-pairs bound.

    Responses follow ``Y = beta * treated + f(x) + noise``; the bound uses the
    range of the no-treatment responses, which the switching identity involves.
    """
    from .simharness import generate_covariates

    fn = _response_fn(f)
    runs = []
    for k in range(r):
        s = mix64(seed, k)
        x = generate_covariates(dist, n, 1, mix64(s, 0))
        z = standardize(x)
        res = greedy_design(z, make_objective("l1", z), mix64(s, 1))
        y0 = fn(x.values[:, 0]) + noise_sd * rng_from_seed(mix64(s, 2)).standard_normal(2 * n)
        init = random_balanced_allocation(n, mix64(s, 1))
        est0 = diff_in_means(y0 + beta * (init.signs == 1), init)
        estf = diff_in_means(y0 + beta * (res.allocation.signs == 1), res.allocation)
        y_range = float(y0.max() - y0.min())
        runs.append({
            "n": n, "run": k, "switches": res.switches,
            "estimate_initial": est0, "estimate_final": estf,
            "abs_error_initial": abs(est0 - beta), "abs_error_final": abs(estf - beta),
            "gap": abs(est0 - estf), "bound": 2.0 / n * res.switches * y_range,
            "bound_holds": _exact_bound_holds(est0, estf, res.switches, n, y_range),
        })
    return runs


def consistency_probe(f: str, dist: str, n_grid: Sequence[int], r: int, seed: int, beta: float = 1.0,
                      noise_sd: float = 1.0) -> list:
    """Mean absolute estimation error of the greedy design across ``n_grid``."""
    table = []
    for n in n_grid:
        runs = consistency_runs(f, dist, n, r, mix64(seed, n), beta, noise_sd)
        table.append({
            "n": n,
            "mean_abs_error": float(np.mean([u["abs_error_final"] for u in runs])),
            "mean_abs_error_random": float(np.mean([u["abs_error_initial"] for u in runs])),
            "mean_switches": float(np.mean([u["switches"] for u in runs])),
            "mean_bound": float(np.mean([u["bound"] for u in runs])),
            "bound_violations": sum(not u["bound_holds"] for u in runs),
            "runs": r,
        })
    return table


def scaled_max(n: int, seed: int) -> float:
    """max |Y| over 2n standard normal draws, divided by sqrt(n)."""
    y = rng_from_seed(seed).standard_normal(2 * n)
    return float(np.abs(y).max() / math.sqrt(n))
