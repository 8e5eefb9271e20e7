"""Data model, CSV ingestion, standardization and seeded randomization."""

from __future__ import annotations

import csv
import io
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence, TextIO

import numpy as np

from .errors import DegenerateCovariate, DomainError, ParseError, ShapeError

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15
THREADS_ENV = "BALANCE_FORGE_THREADS"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CovariateMatrix:
    """Raw 2n x p continuous covariates plus optional per-subject stratum labels."""

    values: np.ndarray
    strata: Optional[tuple] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[1] < 1:
            raise ShapeError(f"covariates must be a 2-d matrix, got shape {values.shape}")
        rows = values.shape[0]
        if rows < 2 or rows % 2:
            raise ShapeError(f"need an even number (>= 2) of subjects, got {rows}")
        if not np.all(np.isfinite(values)):
            raise ParseError("covariates contain non-finite values")
        object.__setattr__(self, "values", _frozen(values))
        if self.strata is not None:
            strata = tuple(str(s) for s in self.strata)
            if len(strata) != rows:
                raise ShapeError(f"{len(strata)} stratum labels for {rows} subjects")
            object.__setattr__(self, "strata", strata)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.rows // 2

    def check_strata(self) -> dict:
        """Map each stratum label to its row indices; every stratum must be even-sized."""
        if self.strata is None:
            return {"all": np.arange(self.rows)}
        groups: dict = {}
        for i, s in enumerate(self.strata):
            groups.setdefault(s, []).append(i)
        for label, idx in groups.items():
            if len(idx) % 2:
                raise ShapeError(f"stratum {label!r} has odd size {len(idx)}")
        return {k: np.array(v) for k, v in groups.items()}


@dataclass(frozen=True)
class StandardizedCovariates:
    """Column-standardized covariates: each column sums to 0 with sum of squares 2n-1."""

    z: np.ndarray
    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        for name in ("z", "means", "sds"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=float)))

    @property
    def rows(self) -> int:
        return self.z.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def n(self) -> int:
        return self.z.shape[0] // 2

    def subset(self, idx) -> "StandardizedCovariates":
        """Re-standardize a subset of rows as a dataset of its own."""
        raw = self.z[idx] * self.sds + self.means
        return standardize(raw)


@dataclass(frozen=True)
class Allocation:
    """Balanced +1/-1 assignment; +1 is treatment."""

    signs: np.ndarray

    def __post_init__(self):
        signs = np.asarray(self.signs)
        if signs.ndim != 1 or signs.size < 2 or signs.size % 2:
            raise ShapeError(f"allocation must have an even length >= 2, got {signs.shape}")
        if not np.all((signs == 1) | (signs == -1)):
            raise ShapeError("allocation entries must be +1 or -1")
        if int(signs.sum()) != 0:
            raise ShapeError("allocation is not balanced")
        object.__setattr__(self, "signs", _frozen(signs.astype(np.int8)))

    @classmethod
    def from_treated(cls, treated: Iterable[int], size: int) -> "Allocation":
        signs = -np.ones(size, dtype=np.int8)
        signs[list(treated)] = 1
        return cls(signs)

    @property
    def size(self) -> int:
        return self.signs.size

    @property
    def n(self) -> int:
        return self.signs.size // 2

    @property
    def treated(self) -> np.ndarray:
        return np.flatnonzero(self.signs == 1)

    @property
    def control(self) -> np.ndarray:
        return np.flatnonzero(self.signs == -1)

    def flipped(self) -> "Allocation":
        return Allocation(-self.signs)

    def tolist(self) -> list:
        return [int(s) for s in self.signs]

    def __eq__(self, other):
        return isinstance(other, Allocation) and np.array_equal(self.signs, other.signs)

    def __hash__(self):
        return hash(self.signs.tobytes())


@dataclass
class DesignResult:
    """Allocation produced by a design method, with its balance bookkeeping."""

    allocation: Allocation
    method: str
    initial_balance: float
    final_balance: float
    switches: int
    seed: int
    objective: str
    trace: Optional[list] = None
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": int(self.seed),
            "allocation": self.allocation.tolist(),
            "initial_balance": float(self.initial_balance),
            "final_balance": float(self.final_balance),
            "switches": int(self.switches),
            "objective": self.objective,
        }


# -- ingestion -----------------------------------------------------------------

_XCOL = re.compile(r"^x(\d+)$")


def load_covariates(source: TextIO | str) -> CovariateMatrix:
    """Read a covariate CSV with header ``x1,...,xp`` and an optional ``stratum`` column.

    ``source`` is an open text stream or a string holding the CSV text.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty covariate file") from None
    header = [h.strip() for h in header]
    xcols = {}
    stratum_col = None
    for pos, name in enumerate(header):
        m = _XCOL.match(name)
        if m:
            xcols[int(m.group(1))] = pos
        elif name == "stratum":
            stratum_col = pos
    if not xcols:
        raise ParseError("header has no covariate columns named x1..xp")
    order = sorted(xcols)
    if order != list(range(1, len(order) + 1)):
        raise ParseError(f"covariate columns must be x1..x{len(order)}, got {order}")

    values, strata = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        rec = []
        for k in order:
            cell = row[xcols[k]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric value {cell!r} in x{k}") from None
            if not math.isfinite(v):
                raise ParseError(f"line {lineno}: non-finite value {cell!r} in x{k}")
            rec.append(v)
        values.append(rec)
        if stratum_col is not None:
            strata.append(row[stratum_col].strip())
    if not values:
        raise ParseError("covariate file has a header but no rows")
    if len(values) % 2:
        raise ShapeError(f"odd number of subjects ({len(values)}); need 2n")
    return CovariateMatrix(np.array(values), tuple(strata) if stratum_col is not None else None)


def load_covariates_file(path) -> CovariateMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        return load_covariates(fh)


def write_covariates(path, cov: CovariateMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = [f"x{j + 1}" for j in range(cov.cols)]
        if cov.strata is not None:
            header.append("stratum")
        w.writerow(header)
        for i, row in enumerate(cov.values):
            rec = [repr(float(v)) for v in row]
            if cov.strata is not None:
                rec.append(cov.strata[i])
            w.writerow(rec)


def standardize(x: CovariateMatrix | np.ndarray) -> StandardizedCovariates:
    """Center each column and scale it to sample sd 1 (divisor 2n-1)."""
    values = x.values if isinstance(x, CovariateMatrix) else np.asarray(x, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] < 2:
        raise ShapeError("need at least two subjects to standardize")
    means = values.mean(axis=0)
    centered = values - means
    sds = np.sqrt((centered ** 2).sum(axis=0) / (values.shape[0] - 1))
    for j in range(values.shape[1]):
        col = values[:, j]
        if np.all(col == col[0]) or not sds[j] > 0:
            raise DegenerateCovariate(j)
    return StandardizedCovariates(centered / sds, means, sds)


# -- seeding -------------------------------------------------------------------

def splitmix64(x: int) -> int:
    x = (x + GOLDEN64) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix64(master: int, r: int) -> int:
    """Seed of replicate ``r`` derived from ``master``: splitmix64(master + golden*(r+1))."""
    return splitmix64((int(master) + GOLDEN64 * (int(r) + 1)) & MASK64)


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & MASK64)


def random_balanced_allocation(n: int, seed: int) -> Allocation:
    """Uniform draw over the C(2n, n) balanced allocations."""
    if n < 1:
        raise ShapeError(f"arm size must be >= 1, got {n}")
    perm = rng_from_seed(seed).permutation(2 * n)
    signs = -np.ones(2 * n, dtype=np.int8)
    signs[perm[:n]] = 1
    return Allocation(signs)


# -- parallel helpers ----------------------------------------------------------

def default_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise DomainError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def parallel_map(fn: Callable, items: Sequence[Any], workers: Optional[int] = None) -> list:
    """Map ``fn`` over ``items`` preserving order; processes when ``workers > 1``.

    Results never depend on ``workers`` because every task carries its own seed.
    """
    workers = default_workers() if workers is None else workers
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))
