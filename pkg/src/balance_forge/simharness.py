"""Simulation grids, rate regression and the table and figure reproduction targets."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .balance import make_objective
from .core import CovariateMatrix, mix64, parallel_map, rng_from_seed, splitmix64, standardize
from .designs import DesignSpec, greedy_design
from .errors import DomainError, RankError
from .kernels import ALIASES, get_dist

log = logging.getLogger(__name__)

DIST_NAMES = ("normal", "exponential", "uniform")
N_GRID = tuple(int(round(10 ** e)) for e in np.arange(1.0, 2.51, 0.25))  # 10 .. 316
P_GRID = (1, 2, 5, 10, 40)
TERMS = ("intercept", "inv_p", "log_n", "log_n_inv_p")


def generate_covariates(dist: str, n: int, p: int, seed: int) -> CovariateMatrix:
    """2n x p iid draws from the standard normal, exponential(1) or uniform(0,1)."""
    if dist not in ALIASES:
        raise DomainError(f"unknown distribution {dist!r}; choose from {DIST_NAMES}")
    rng = rng_from_seed(seed)
    return CovariateMatrix(get_dist(dist).sampler(rng, (2 * n, p)))


@dataclass
class RateRecord:
    n: int
    p: int
    dist: str
    replicate: int
    seed: int
    initial_balance: float
    final_balance: float
    switches: int
    method: str


@dataclass
class RateFit:
    coefficients: dict
    standard_errors: dict
    r_squared: float
    n_obs: int
    dropped: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def cell_seed(master_seed: int, dist: str, n: int, p: int, replicate: int) -> int:
    """Seed of one replicate; depends only on the cell values, not on the grid layout."""
    d = DIST_NAMES.index(_canonical_dist(dist))
    return mix64(mix64(mix64(mix64(master_seed, d), n), p), replicate)


def _canonical_dist(dist: str) -> str:
    return {"uniform01": "uniform", "exponential1": "exponential", "stdnormal": "normal"}.get(dist, dist)


def _one_record(task) -> RateRecord:
    n, p, dist, rep, seed, spec = task
    x = generate_covariates(dist, n, p, mix64(seed, 0))
    res = spec(x, mix64(seed, 1))
    return RateRecord(n, p, _canonical_dist(dist), rep, seed, res.initial_balance, res.final_balance,
                      res.switches, spec.method)


def run_grid(n_grid: Sequence[int], p_grid: Sequence[int], dist: str, r: int, method: str | DesignSpec = "greedy",
             master_seed: int = 0, workers: Optional[int] = 1) -> list:
    """One record per (n, p, replicate), ordered by n, then p, then replicate."""
    if not n_grid or not p_grid:
        raise DomainError("grids must be nonempty")
    if r < 1:
        raise DomainError(f"need at least one replicate, got {r}")
    spec = method if isinstance(method, DesignSpec) else DesignSpec(method)
    dist = _canonical_dist(dist)
    tasks = [(int(n), int(p), dist, k, cell_seed(master_seed, dist, n, p, k), spec)
             for n in n_grid for p in p_grid for k in range(r)]
    return parallel_map(_one_record, tasks, workers)


RECORD_FIELDS = ("n", "p", "dist", "replicate", "seed", "initial_balance", "final_balance", "switches", "method")


def write_records(path, records: Iterable[RateRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for rec in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(rec, f) for f in RECORD_FIELDS)])


def read_records(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(RateRecord(int(row["n"]), int(row["p"]), row["dist"], int(row["replicate"]),
                                  int(row["seed"]), float(row["initial_balance"]), float(row["final_balance"]),
                                  int(row["switches"]), row["method"]))
    return out


def ols(X: np.ndarray, y: np.ndarray):
    """Least squares through the normal equations (LU with partial pivoting).

    Returns coefficients, their standard errors and R^2.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankError(f"design matrix of shape {X.shape} is rank deficient")
    XtX = X.T @ X
    beta = np.linalg.solve(XtX, X.T @ y)
    resid = y - X @ beta
    dof = X.shape[0] - X.shape[1]
    sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
    se = np.sqrt(np.maximum(np.diag(np.linalg.inv(XtX)) * sigma2, 0.0))
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    return beta, se, r2


def fit_rate_regression(records: Sequence[RateRecord]) -> RateFit:
    """Regress ln(final balance) on 1, 1/p, ln n and ln n / p."""
    kept = [r for r in records if r.final_balance > 0]
    dropped = len(records) - len(kept)
    if dropped:
        log.warning("dropped %d records with zero final balance from the log fit", dropped)
    if len({r.n for r in kept}) < 2 or len({r.p for r in kept}) < 2:
        raise RankError("need at least two distinct n and two distinct p values")
    n = np.array([r.n for r in kept], dtype=float)
    p = np.array([r.p for r in kept], dtype=float)
    y = np.log([r.final_balance for r in kept])
    X = np.column_stack([np.ones_like(n), 1.0 / p, np.log(n), np.log(n) / p])
    beta, se, r2 = ols(X, y)
    return RateFit(dict(zip(TERMS, map(float, beta))), dict(zip(TERMS, map(float, se))), r2, len(kept), dropped)


def loglog_slope(x, y) -> float:
    """Slope of log10(y) on log10(x)."""
    lx, ly = np.log10(np.asarray(x, float)), np.log10(np.asarray(y, float))
    X = np.column_stack([np.ones_like(lx), lx])
    return float(ols(X, ly)[0][1])


def summarize(records: Sequence[RateRecord]) -> list:
    """Per (dist, method, n, p) cell: mean balance, mean log10 balance, mean switches."""
    cells: dict = {}
    for r in records:
        cells.setdefault((r.dist, r.method, r.n, r.p), []).append(r)
    out = []
    for (dist, method, n, p), recs in cells.items():
        fb = np.array([r.final_balance for r in recs])
        pos = fb[fb > 0]
        out.append({
            "dist": dist, "method": method, "n": n, "p": p, "replicates": len(recs),
            "mean_balance": float(fb.mean()),
            "mean_log10_balance": float(np.log10(pos).mean()) if pos.size else float("nan"),
            "mean_switches": float(np.mean([r.switches for r in recs])),
        })
    return out


# -- reproduction targets --------------------------------------------------------

TARGETS = ("table1", "table2", "fig1", "fig2", "fig34", "table3")
SCALES = {
    "desk": {"fig_r": 100, "table3_r": 30, "fig34_r": 100, "fig34_n": N_GRID[:5]},
    "full": {"fig_r": 1000, "table3_r": 100, "fig34_r": 1000, "fig34_n": N_GRID},
}


def _write_rows(path, rows: Sequence[dict], fields: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def table1_rows(seed: int, n: int = 50, runs: int = 20) -> list:
    """Greedy runs from ``runs`` random starts on one normal dataset, sorted by final balance."""
    x = generate_covariates("normal", n, 1, splitmix64(seed))
    z = standardize(x)
    obj = make_objective("l1", z)
    res = [greedy_design(z, obj, mix64(seed, k)) for k in range(runs)]
    rows = [{"initial_balance": r.initial_balance, "switches": r.switches, "final_balance": r.final_balance}
            for r in res]
    return sorted(rows, key=lambda row: row["final_balance"])


def table2_rows(seed: int, n: int = 14, runs: int = 5, workers: Optional[int] = None) -> list:
    from .optimal import enumerate_optimal

    x = generate_covariates("normal", n, 1, splitmix64(seed))
    z = standardize(x)
    obj = make_objective("l1", z)
    res = sorted((greedy_design(z, obj, mix64(seed, k)) for k in range(runs)), key=lambda r: r.final_balance)
    rows = [{"kind": "greedy", "initial_balance": r.initial_balance, "switches": r.switches,
             "final_balance": r.final_balance, "visited": ""} for r in res]
    opt = enumerate_optimal(z, obj, workers=workers)
    rows.append({"kind": "optimal", "initial_balance": "", "switches": "", "final_balance": opt.balance,
                 "visited": opt.visited})
    return rows


def fig34_rows(seed: int, n_grid, p_grid, r: int, workers: Optional[int] = 1) -> list:
    from .randomness import estimate_pair_probabilities, randomness_report

    rows = []
    for n in n_grid:
        for p in list(p_grid) + [None]:
            spec = DesignSpec("greedy") if p is not None else DesignSpec("random")
            est = estimate_pair_probabilities(spec, n, p or 1, "normal", r, mix64(seed, n * 1000 + (p or 0)),
                                              workers=workers)
            rep = randomness_report(est)
            rows.append({"n": n, "p": p if p is not None else "", "method": spec.method,
                         "entropy": rep.entropy, "deviation": rep.deviation,
                         "bias_corrected_deviation": rep.bias_corrected_deviation})
    return rows


def reproduce(target: str, seed: int, scale: str = "desk", out_dir: str = ".", workers: Optional[int] = 1,
              figures: bool = True) -> list:
    """Write the data (CSV) and, for figures, a PNG rendering; returns the written paths."""
    from . import plotting

    if target not in TARGETS:
        raise DomainError(f"unknown target {target!r}; choose from {TARGETS}")
    if scale not in SCALES:
        raise DomainError(f"unknown scale {scale!r}; choose from {tuple(SCALES)}")
    cfg = SCALES[scale]
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def path(name):
        p = os.path.join(out_dir, name)
        written.append(p)
        return p

    if target == "table1":
        _write_rows(path("table1.csv"), table1_rows(seed), ("initial_balance", "switches", "final_balance"))
    elif target == "table2":
        _write_rows(path("table2.csv"), table2_rows(seed, workers=workers),
                    ("kind", "initial_balance", "switches", "final_balance", "visited"))
    elif target == "fig1":
        records = []
        for dist in DIST_NAMES:
            records += run_grid(N_GRID, (1,), dist, cfg["fig_r"], "greedy", seed, workers)
        rows = sorted(summarize(records), key=lambda r: (DIST_NAMES.index(r["dist"]), r["n"]))
        _write_rows(path("fig1.csv"), rows, ("dist", "n", "mean_log10_balance", "mean_balance", "replicates"))
        if figures:
            plotting.plot_balance_by_dist(rows, path("fig1.png"))
    elif target == "fig2":
        records = run_grid(N_GRID, P_GRID, "normal", cfg["fig_r"], "greedy", seed, workers)
        rows = sorted(summarize(records), key=lambda r: (r["p"], r["n"]))
        _write_rows(path("fig2.csv"), rows, ("n", "p", "mean_log10_balance", "mean_switches", "replicates"))
        if figures:
            plotting.plot_balance_and_switches(rows, path("fig2.png"))
    elif target == "fig34":
        rows = fig34_rows(seed, cfg["fig34_n"], P_GRID, cfg["fig34_r"], workers)
        _write_rows(path("fig34.csv"), rows,
                    ("n", "p", "method", "entropy", "deviation", "bias_corrected_deviation"))
        if figures:
            plotting.plot_randomness(rows, path("fig34.png"))
    elif target == "table3":
        records = run_grid(N_GRID, P_GRID, "normal", cfg["table3_r"], "greedy", seed, workers)
        write_records(path("table3_records.csv"), records)
        fit = fit_rate_regression(records)
        rows = [{"term": t, "coefficient": fit.coefficients[t], "two_se": 2 * fit.standard_errors[t]}
                for t in TERMS]
        rows.append({"term": "r_squared", "coefficient": fit.r_squared, "two_se": ""})
        _write_rows(path("table3.csv"), rows, ("term", "coefficient", "two_se"))
    return written
