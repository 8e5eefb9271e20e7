"""Greedy pair-switching experimental designs, randomness diagnostics and randomization inference."""

__version__ = "0.1.0"

from .balance import BalanceObjective, l1_balance, mahalanobis_balance, make_objective, weighted_l1_balance
from .core import (
    Allocation,
    CovariateMatrix,
    DesignResult,
    StandardizedCovariates,
    load_covariates,
    mix64,
    random_balanced_allocation,
    standardize,
)
from .designs import (
    DesignSpec,
    greedy_design,
    greedy_pair_switch,
    greedy_restarts,
    greedy_restricted,
    greedy_stratified,
    matched_pairs,
    rerandomize,
    run_design,
)
from .optimal import enumerate_optimal

__all__ = [
    "Allocation", "BalanceObjective", "CovariateMatrix", "DesignResult", "DesignSpec",
    "StandardizedCovariates", "enumerate_optimal", "greedy_design", "greedy_pair_switch",
    "greedy_restarts", "greedy_restricted", "greedy_stratified", "l1_balance", "load_covariates",
    "mahalanobis_balance", "make_objective", "matched_pairs", "mix64", "random_balanced_allocation",
    "rerandomize", "run_design", "standardize", "weighted_l1_balance",
]
