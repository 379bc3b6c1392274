"""Proximal operator of the weighted sum of group Euclidean norms."""

from __future__ import annotations

import numba
import numpy as np


def group_thresholds(step: float, lam: float, weights: np.ndarray) -> np.ndarray:
    """Per-group thresholds ``step * lam * K_j``."""
    t = float(step) * float(lam) * np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise ValueError("thresholds must be finite and nonnegative")
    return t


def prox_group_l2(u: np.ndarray, thresholds: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Blockwise shrinkage ``(1 - t_j / ||u_j||_2)_+ u_j``.

    Parameters
    ----------
    u : ndarray, shape (p,)
    thresholds : ndarray, shape (J,)
        One nonnegative threshold per group.
    starts : ndarray, shape (J + 1,)
        Group boundaries; group ``j`` is ``u[starts[j]:starts[j + 1]]``.

    A block whose norm does not exceed its threshold (including a zero block)
    maps to exactly zero.
    """
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)
    _prox_into(u, np.asarray(thresholds, dtype=np.float64), np.asarray(starts, dtype=np.int64), out)
    return out


@numba.njit(cache=True)
def _prox_into(u, thr, starts, out):
    for j in range(thr.shape[0]):
        a, b = starts[j], starts[j + 1]
        sq = 0.0
        for k in range(a, b):
            sq += u[k] * u[k]
        norm = np.sqrt(sq)
        if norm <= thr[j]:
            for k in range(a, b):
                out[k] = 0.0
        else:
            scale = 1.0 - thr[j] / norm
            for k in range(a, b):
                out[k] = scale * u[k]


@numba.njit(cache=True)
def _group_norm_sum(x, weights, starts):
    total = 0.0
    for j in range(weights.shape[0]):
        sq = 0.0
        for k in range(starts[j], starts[j + 1]):
            sq += x[k] * x[k]
        total += weights[j] * np.sqrt(sq)
    return total


def group_norm_sum(x: np.ndarray, weights: np.ndarray, starts: np.ndarray) -> float:
    """``sum_j K_j ||x_j||_2``."""
    return float(_group_norm_sum(np.asarray(x, dtype=np.float64), np.asarray(weights, dtype=np.float64),
                                 np.asarray(starts, dtype=np.int64)))
