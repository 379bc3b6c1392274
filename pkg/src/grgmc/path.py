"""Regularization paths with warm starts, k-fold cross-validation, model selection."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .design import GroupedDesign, check_response, lambda_max
from .penalties import GmcConfig
from .pdhg import Operators, PdhgOptions, PdhgReport, pdhg_solve

SELECTION_THRESHOLD = 1e-8


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray
    ratio: float | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("lambda grid must be a non-empty 1-d array")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("lambda values must be finite and nonnegative")
        if np.any(np.diff(vals) >= 0):
            raise ValueError("lambda grid must be strictly decreasing")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size


def default_ratio(design: GroupedDesign) -> float:
    return 1e-3 if design.n > design.p else 1e-2


def make_grid(design: GroupedDesign, y, count: int = 100, ratio: float | None = None) -> LambdaGrid:
    """``count`` log-spaced values from ``lambda_max`` down to ``ratio * lambda_max``."""
    if count < 2:
        raise ValueError("a lambda grid needs at least 2 points")
    ratio = default_ratio(design) if ratio is None else float(ratio)
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    top = lambda_max(design, y)
    if top == 0.0:
        raise ValueError("zero path: lambda_max is 0 (response orthogonal to every group)")
    return LambdaGrid(top * np.logspace(0.0, math.log10(ratio), count), ratio)


@dataclass
class SolutionPath:
    grid: LambdaGrid
    coefs: np.ndarray  # (p, len(grid)), internal column order
    reports: list[PdhgReport]
    design: GroupedDesign = field(repr=False)

    @property
    def converged(self) -> np.ndarray:
        return np.array([r.converged for r in self.reports])

    def active_groups(self, k: int) -> list[int]:
        norms = self.design.block_norms(self.coefs[:, k])
        return [int(j) for j in np.flatnonzero(norms > SELECTION_THRESHOLD)]

    def to_rows(self, original_order: bool = True):
        """Yield ``(lambda, column, group, coefficient)`` rows."""
        d = self.design
        order = np.argsort(d.permutation) if original_order else np.arange(d.p)
        for k, lam in enumerate(self.grid.values):
            for col in order:
                yield lam, d.column_names[col], d.group_names[d.group_index[col]], self.coefs[col, k]


def solution_path(
    design: GroupedDesign, y, grid: LambdaGrid, cfg: GmcConfig | None = None,
    opts: PdhgOptions | None = None,
) -> SolutionPath:
    """Solve at every grid value, each solve warm-started from the previous one.

    ``cfg.lam`` is ignored.  The first (largest) value is cold-started at zero.
    Non-converged points are flagged in their report; the path continues.
    """
    cfg = cfg or GmcConfig()
    y = check_response(design, y)
    ops = Operators(design, y, cfg) if cfg.btb is None else None
    coefs = np.zeros((design.p, len(grid)))
    reports = []
    warm = None
    for k, lam in enumerate(grid.values):
        beta, _, rep = pdhg_solve(design, y, cfg.with_lam(lam), opts, warm=warm, ops=ops)
        coefs[:, k] = beta
        reports.append(rep)
        warm = rep.state
    return SolutionPath(grid, coefs, reports, design)


@dataclass
class CvResult:
    lambdas: np.ndarray
    mean_error: np.ndarray
    std_error: np.ndarray
    selected_index: int
    fold_ids: np.ndarray
    folds: int
    seed: int
    rule: str = "min"
    fold_errors: np.ndarray = None
    failures: int = 0

    @property
    def selected_lambda(self) -> float:
        return float(self.lambdas[self.selected_index])


def assign_folds(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold id per observation: contiguous slices of a seeded permutation."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > n:
        raise ValueError(f"cannot split {n} observations into {folds} folds")
    perm = rng.permutation(seed, 0, n)
    ids = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(perm, folds)):
        ids[chunk] = f
    return ids


def _fold_errors(args):
    design, y, grid_values, cfg, opts, train, test = args
    sub = design.subset_rows(train)
    path = solution_path(sub, y[train], LambdaGrid(grid_values), cfg, opts)
    resid = y[test, None] - design.X[test] @ path.coefs
    failures = int(np.sum(~path.converged))
    return np.mean(resid**2, axis=0), failures


def select_index(mean: np.ndarray, se: np.ndarray, rule: str = "min") -> int:
    """Index of the chosen lambda (grid is descending, so ties go to the larger lambda)."""
    best = int(np.argmin(mean))
    if rule == "min":
        return best
    if rule == "1se":
        return int(np.flatnonzero(mean <= mean[best] + se[best])[0])
    raise ValueError(f"unknown selection rule '{rule}'")


def cross_validate(
    design: GroupedDesign, y, folds: int, grid: LambdaGrid, cfg: GmcConfig | None = None,
    seed: int = 0, opts: PdhgOptions | None = None, rule: str = "min",
    fold_ids: np.ndarray | None = None, threads: int = 1,
) -> CvResult:
    """K-fold cross-validation of the held-out mean squared error along ``grid``.

    ``fold_ids`` overrides the seeded assignment.  Folds run in parallel when
    ``threads > 1``; results are collected in fold order, so they do not
    depend on scheduling.
    """
    cfg = cfg or GmcConfig()
    y = check_response(design, y)
    if fold_ids is None:
        fold_ids = assign_folds(design.n, folds, seed)
    else:
        fold_ids = np.asarray(fold_ids, dtype=np.int64)
        folds = int(fold_ids.max()) + 1
    jobs = []
    for f in range(folds):
        test = np.flatnonzero(fold_ids == f)
        train = np.flatnonzero(fold_ids != f)
        if train.size == 0:
            raise ValueError(f"fold {f} leaves no training rows")
        if test.size == 0:
            raise ValueError(f"fold {f} is empty")
        jobs.append((design, y, grid.values, cfg, opts, train, test))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_fold_errors, jobs))
    else:
        results = [_fold_errors(j) for j in jobs]
    errors = np.vstack([r[0] for r in results])
    mean = errors.mean(axis=0)
    se = errors.std(axis=0, ddof=1) / math.sqrt(folds)
    idx = select_index(mean, se, rule)
    return CvResult(grid.values, mean, se, idx, fold_ids, folds, seed, rule, errors,
                    sum(r[1] for r in results))


def fmt(x: float) -> str:
    return f"{x:.12g}"


def write_path_csv(path: SolutionPath, out) -> None:
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "column", "group", "coefficient"])
        for lam, col, grp, coef in path.to_rows():
            w.writerow([fmt(lam), col, grp, fmt(coef)])


def write_cv_csv(cv: CvResult, out) -> None:
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "mean_error", "std_error"])
        for lam, m, s in zip(cv.lambdas, cv.mean_error, cv.std_error):
            w.writerow([fmt(lam), fmt(m), fmt(s)])
