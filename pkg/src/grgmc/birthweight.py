"""Build the grouped birth-weight design from the raw MASS ``birthwt`` table.

Expected raw columns (extra columns such as ``rownames`` or ``low`` are ignored):
``age, lwt, race, smoke, ptl, ht, ui, ftv, bwt``.  The result has 16
predictors in 8 groups:

=========  ==========================================  =======
group      columns                                     count
=========  ==========================================  =======
age        orthogonal cubic polynomial in age          3
lwt        orthogonal cubic polynomial in weight       3
race       black, other (white is the baseline)        2
smoke      smoker                                      1
ptl        one, two or more previous premature labors  2
ht         hypertension history                        1
ui         uterine irritability                        1
ftv        one, two, three or more physician visits    3
=========  ==========================================  =======

The response is birth weight in kilograms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import rng
from .design import DesignError, GroupedDesign, _read_csv, standardize
from .path import LambdaGrid, cross_validate, make_grid, solution_path
from .pdhg import PdhgOptions
from .penalties import GmcConfig

SPLIT_STREAM = 3
REQUIRED = ("age", "lwt", "race", "smoke", "ptl", "ht", "ui", "ftv", "bwt")
VISITS_GROUP = "ftv"


def orthogonal_poly(x: np.ndarray, degree: int) -> np.ndarray:
    """Columns of an orthogonal polynomial basis (degrees 1..degree), centered, unit variance."""
    x = np.asarray(x, dtype=np.float64)
    V = np.vander(x - x.mean(), degree + 1, increasing=True)
    Q, R = np.linalg.qr(V)
    if np.any(np.abs(np.diag(R)) < 1e-10 * np.abs(R).max()):
        raise DesignError(f"need at least {degree + 1} distinct values for a degree-{degree} polynomial")
    Q = Q[:, 1:] * np.sign(np.diag(R)[1:])  # fix the sign so each column increases with its leading power
    return Q / Q.std(axis=0)


def birthweight_design(raw: dict[str, np.ndarray]) -> tuple[np.ndarray, list[str], list[str], np.ndarray]:
    """Return ``(X, column_names, group_of_column, y)``."""
    missing = [c for c in REQUIRED if c not in raw]
    if missing:
        raise DesignError(f"birth-weight file lacks column(s): {', '.join(missing)}")
    cols, names, groups = [], [], []

    def add(group, name, values):
        cols.append(np.asarray(values, dtype=np.float64))
        names.append(name)
        groups.append(group)

    for var in ("age", "lwt"):
        P = orthogonal_poly(raw[var], 3)
        for k in range(3):
            add(var, f"{var}{k + 1}", P[:, k])
    race = raw["race"]
    add("race", "race_black", race == 2)
    add("race", "race_other", race == 3)
    add("smoke", "smoke", raw["smoke"] > 0)
    ptl = raw["ptl"]
    add("ptl", "ptl1", ptl == 1)
    add("ptl", "ptl2plus", ptl >= 2)
    add("ht", "ht", raw["ht"] > 0)
    add("ui", "ui", raw["ui"] > 0)
    ftv = raw["ftv"]
    add("ftv", "ftv1", ftv == 1)
    add("ftv", "ftv2", ftv == 2)
    add("ftv", "ftv3plus", ftv >= 3)
    return np.column_stack(cols), names, groups, np.asarray(raw["bwt"], dtype=np.float64) / 1000.0


def prepare_birthweight(raw_file, design_out, groups_out, response: str = "bwt") -> None:
    """Write the design CSV (predictors plus ``response``) and the column-to-group CSV."""
    header, rows = _read_csv(raw_file)
    if not rows:
        raise DesignError(f"{raw_file}: no data rows")
    try:
        data = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise DesignError(f"{raw_file}: non-numeric or ragged rows ({exc})") from None
    raw = {h: data[:, i] for i, h in enumerate(header)}
    X, names, groups, y = birthweight_design(raw)
    with open(design_out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + [response])
        for row, target in zip(X, y):
            w.writerow([f"{v:.12g}" for v in row] + [f"{target:.12g}"])
    with open(groups_out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "group"])
        w.writerows(zip(names, groups))


@dataclass
class SplitResult:
    test_error: float
    selected_lambda: float
    active: list[str]
    excluded: list[str]


def evaluate_splits(
    design: GroupedDesign, y, alpha: float = 0.8, splits: int = 20, train_size: int = 142,
    folds: int = 10, seed: int = 0, refit: str = "full", nlambda: int = 100,
    opts: PdhgOptions | None = None,
) -> list[SplitResult]:
    """Random train/test evaluation with cross-validated lambda.

    For split ``s`` (seed ``seed ^ s``) a random ``train_size`` subset is
    standardized and ``lambda`` is chosen on it by ``folds``-fold CV.  With
    ``refit="full"`` the model is then refitted at that ``lambda`` on all rows
    (so the test rows also enter the final fit); ``refit="train"`` keeps the
    training fit.  Test error is the mean squared error on the held-out rows,
    on the raw response scale.
    """
    if refit not in ("full", "train"):
        raise ValueError(f"refit must be 'full' or 'train', got '{refit}'")
    if not 0 < train_size < design.n:
        raise ValueError("train_size must leave at least one test row")
    y = np.asarray(y, dtype=np.float64)
    cfg = GmcConfig(alpha)
    results = []
    for s in range(splits):
        split_seed = seed ^ s
        perm = rng.permutation(split_seed, SPLIT_STREAM, design.n)
        train, test = np.sort(perm[:train_size]), np.sort(perm[train_size:])
        td, ty, _ = standardize(design.subset_rows(train), y[train])
        grid = make_grid(td, ty, nlambda)
        cv = cross_validate(td, ty, folds, grid, cfg, seed=split_seed, opts=opts)
        rows = np.arange(design.n) if refit == "full" else train
        fd, fy, rec = standardize(design.subset_rows(rows), y[rows])
        path = solution_path(fd, fy, LambdaGrid(grid.values[: cv.selected_index + 1]), cfg, opts)
        beta = path.coefs[:, -1]
        raw, intercept = rec.unstandardize(beta)
        resid = y[test] - design.X[test] @ raw - intercept
        active = set(path.active_groups(len(path.grid) - 1))
        names = design.group_names
        results.append(SplitResult(
            float(np.mean(resid**2)), cv.selected_lambda,
            [names[j] for j in sorted(active)],
            [names[j] for j in range(design.num_groups) if j not in active]))
    return results
