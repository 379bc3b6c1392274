"""Grouped regression problems: design data model, file ingestion, lambda_max."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DesignError(ValueError):
    """Invalid design, group map or response."""


@dataclass(frozen=True, eq=False)
class GroupedDesign:
    """Design matrix whose columns are partitioned into contiguous groups.

    Parameters
    ----------
    X : ndarray, shape (n, p)
        Design matrix, columns already ordered so that groups are contiguous.
    group_sizes : sequence of int
        Size ``p_j`` of each group, in column order.
    weights : sequence of float, optional
        Group weights ``K_j``; defaults to ``sqrt(p_j)``.
    column_names, group_names : sequence of str, optional
        Labels used when writing results.
    permutation : ndarray, optional
        ``permutation[k]`` is the original file position of column ``k``.
        Identity when the columns were not reordered.
    """

    X: np.ndarray
    group_sizes: tuple[int, ...]
    weights: np.ndarray = None
    column_names: tuple[str, ...] = None
    group_names: tuple[str, ...] = None
    permutation: np.ndarray = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise DesignError(f"design must be a non-empty 2-d array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DesignError("design contains non-finite entries")
        sizes = tuple(int(s) for s in self.group_sizes)
        if any(s < 1 for s in sizes):
            raise DesignError("every group needs at least one column")
        if sum(sizes) != X.shape[1]:
            raise DesignError(f"group sizes sum to {sum(sizes)}, design has {X.shape[1]} columns")
        if self.weights is None:
            weights = np.sqrt(np.asarray(sizes, dtype=np.float64))
        else:
            weights = np.asarray(self.weights, dtype=np.float64).ravel()
            if weights.shape != (len(sizes),):
                raise DesignError(f"expected {len(sizes)} group weights, got {weights.shape[0]}")
            if not np.all(np.isfinite(weights)) or np.any(weights < 0):
                raise DesignError("group weights must be finite and nonnegative")
        p = X.shape[1]
        cols = self.column_names or tuple(f"x{k + 1}" for k in range(p))
        groups = self.group_names or tuple(f"g{j + 1}" for j in range(len(sizes)))
        if len(cols) != p or len(groups) != len(sizes):
            raise DesignError("label counts do not match design dimensions")
        perm = np.arange(p) if self.permutation is None else np.asarray(self.permutation, dtype=np.intp)
        if sorted(perm.tolist()) != list(range(p)):
            raise DesignError("permutation is not a permutation of the columns")
        X.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "column_names", tuple(cols))
        object.__setattr__(self, "group_names", tuple(groups))
        object.__setattr__(self, "permutation", perm)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def num_groups(self) -> int:
        return len(self.group_sizes)

    @cached_property
    def starts(self) -> np.ndarray:
        """Group boundaries: group ``j`` spans ``starts[j]:starts[j + 1]``."""
        return np.concatenate([[0], np.cumsum(self.group_sizes)]).astype(np.int64)

    @cached_property
    def group_index(self) -> np.ndarray:
        """Group id (0-based) of every column."""
        return np.repeat(np.arange(self.num_groups), self.group_sizes)

    def blocks(self):
        """Yield ``slice`` objects, one per group."""
        s = self.starts
        for j in range(self.num_groups):
            yield slice(s[j], s[j + 1])

    def block_norms(self, beta: np.ndarray) -> np.ndarray:
        """Euclidean norm of each coefficient block."""
        sq = np.add.reduceat(np.square(beta), self.starts[:-1])
        return np.sqrt(sq)

    @cached_property
    def gram(self) -> np.ndarray:
        """``X^T X / n``; computed once and shared by every fit on this design."""
        G = self.X.T @ self.X / self.n
        G = 0.5 * (G + G.T)
        G.setflags(write=False)
        return G

    def to_original_order(self, beta: np.ndarray) -> np.ndarray:
        """Map coefficients from the internal (grouped) order back to file order."""
        out = np.empty_like(beta)
        out[self.permutation] = beta
        return out

    def subset_rows(self, rows: np.ndarray) -> "GroupedDesign":
        return GroupedDesign(
            self.X[rows], self.group_sizes, self.weights,
            self.column_names, self.group_names, self.permutation,
        )

    def scaling_violations(self) -> list[str]:
        """Groups breaking the theory scaling condition ``||X_j||_2 <= sqrt(n)``."""
        bad = []
        for name, sl in zip(self.group_names, self.blocks()):
            if np.linalg.norm(self.X[:, sl], 2) > math.sqrt(self.n) * (1 + 1e-12):
                bad.append(name)
        return bad


def check_response(design: GroupedDesign, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != design.n:
        raise DesignError(f"response has length {y.shape[0]}, design has {design.n} rows")
    if not np.all(np.isfinite(y)):
        raise DesignError("response contains non-finite entries")
    return y


def lambda_max(design: GroupedDesign, y) -> float:
    """Smallest tuning value above which the fitted coefficients are exactly zero.

    ``max_j ||X_j^T y||_2 / (n K_j)``.  Holds for every convexity-preserving
    choice of the curvature matrix, so it does not depend on ``alpha``.
    """
    y = check_response(design, y)
    zero = np.flatnonzero(design.weights == 0)
    if zero.size:
        raise DesignError(f"group '{design.group_names[zero[0]]}' has zero weight; lambda_max undefined")
    corr = design.X.T @ y / design.n
    return float(np.max(design.block_norms(corr) / design.weights))


@dataclass
class StandardizationRecord:
    """How a design/response pair was centered and scaled."""

    column_means: np.ndarray
    column_scales: np.ndarray
    response_mean: float
    applied: bool = True
    constant_columns: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))

    def unstandardize(self, beta: np.ndarray) -> tuple[np.ndarray, float]:
        """Coefficients and intercept on the raw scale."""
        if not self.applied:
            return np.array(beta, dtype=np.float64), 0.0
        raw = np.asarray(beta, dtype=np.float64) / self.column_scales
        raw[self.constant_columns] = 0.0
        intercept = self.response_mean - float(self.column_means @ raw)
        return raw, intercept

    def standardize_coef(self, raw: np.ndarray) -> np.ndarray:
        if not self.applied:
            return np.array(raw, dtype=np.float64)
        return np.asarray(raw, dtype=np.float64) * self.column_scales


def standardize(design: GroupedDesign, y) -> tuple[GroupedDesign, np.ndarray, StandardizationRecord]:
    """Center ``y``; center and scale the columns of ``X`` to unit variance.

    Zero-variance columns are left at zero (scale clamped to 1) so they can
    never enter the model.
    """
    y = check_response(design, y)
    means = design.X.mean(axis=0)
    Xc = design.X - means
    scales = np.sqrt(np.mean(Xc**2, axis=0))
    const = np.flatnonzero(scales <= 1e-12 * (1.0 + np.abs(means)))
    if const.size:
        names = ", ".join(design.column_names[k] for k in const)
        warnings.warn(f"zero-variance columns excluded from the model: {names}", stacklevel=2)
        scales[const] = 1.0
        Xc[:, const] = 0.0
    ymean = float(y.mean())
    record = StandardizationRecord(means, scales, ymean, True, const)
    std = GroupedDesign(
        Xc / scales, design.group_sizes, design.weights,
        design.column_names, design.group_names, design.permutation,
    )
    return std, y - ymean, record


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DesignError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], rows[1:]


def load_problem(
    design_file, groups_file, response_column: str, weights: dict[str, float] | None = None,
) -> tuple[GroupedDesign, np.ndarray]:
    """Read a design CSV and a ``column,group`` map into a grouped problem.

    The response column is taken out of the design file.  Groups are numbered
    in order of first appearance in the group map and columns are reordered so
    each group is contiguous; ``design.permutation`` records the original
    positions.
    """
    header, rows = _read_csv(Path(design_file))
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise DesignError(f"duplicate column names: {', '.join(dup)}")
    if response_column not in header:
        raise DesignError(f"response column '{response_column}' not found")
    if not rows:
        raise DesignError(f"{design_file}: no data rows")
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DesignError(f"{design_file}: non-numeric cell ({exc})") from None
    if data.shape[1] != len(header):
        raise DesignError(f"{design_file}: ragged rows")

    gheader, grows = _read_csv(Path(groups_file))
    if [h.lower() for h in gheader[:2]] != ["column", "group"]:
        raise DesignError(f"{groups_file}: expected header 'column,group'")
    gmap: dict[str, str] = {}
    order: list[str] = []
    for r in grows:
        col, grp = r[0].strip(), r[1].strip()
        gmap[col] = grp
        if grp not in order:
            order.append(grp)

    predictors = [h for h in header if h != response_column]
    missing = [c for c in predictors if c not in gmap]
    if missing:
        raise DesignError(f"unmapped column(s): {', '.join(missing)}")
    used = [g for g in order if any(gmap[c] == g for c in predictors)]

    cols: list[str] = []
    sizes: list[int] = []
    for g in used:
        members = [c for c in predictors if gmap[c] == g]
        cols.extend(members)
        sizes.append(len(members))
    pos = {c: predictors.index(c) for c in predictors}
    perm = np.array([pos[c] for c in cols], dtype=np.intp)
    idx = [header.index(c) for c in cols]
    w = None
    if weights is not None:
        w = [weights.get(g, math.sqrt(s)) for g, s in zip(used, sizes)]
    design = GroupedDesign(data[:, idx], sizes, w, tuple(cols), tuple(used), perm)
    y = check_response(design, data[:, header.index(response_column)])
    return design, y


def from_labels(X, labels: Sequence, weights=None, column_names=None) -> GroupedDesign:
    """Build a design from per-column group labels (any hashable), reordering columns."""
    labels = list(labels)
    order: list = []
    for g in labels:
        if g not in order:
            order.append(g)
    perm = np.concatenate([[k for k, g in enumerate(labels) if g == grp] for grp in order]).astype(np.intp)
    sizes = [labels.count(g) for g in order]
    X = np.asarray(X, dtype=np.float64)
    names = None if column_names is None else tuple(column_names[k] for k in perm)
    return GroupedDesign(X[:, perm], sizes, weights, names, tuple(str(g) for g in order), perm)
