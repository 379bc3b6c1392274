"""Huber-type smoothers, the MC/MCP family, and the group GMC penalty.

The group GMC penalty of a coefficient vector is the weighted group-lasso
penalty minus a generalized Huber term,

    Phi(beta) = sum_j K_j ||beta_j|| - min_v { sum_j K_j ||v_j|| + (1/2n) ||B (beta - v)||^2 },

and only depends on ``B`` through ``B^T B``.  With the default choice
``lam * B^T B = alpha * X^T X`` the operator ``Z = (lam/n) B^T B = alpha X^T X / n``
does not depend on ``lam``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import GroupedDesign, check_response
from .fbs import FbsOptions, fbs_quadratic
from .prox import group_norm_sum

EXPLICIT_GRAM_MAX_P = 2000


def huber(beta):
    """Huber function: ``beta**2 / 2`` on ``|beta| <= 1``, ``|beta| - 1/2`` beyond."""
    a = np.abs(np.asarray(beta, dtype=np.float64))
    out = np.where(a <= 1.0, 0.5 * a * a, a - 0.5)
    return out if out.ndim else float(out)


def scaled_huber(beta, b):
    """``huber(b**2 * beta) / b**2``; identically zero when ``b == 0``."""
    b2 = float(b) ** 2
    if b2 == 0.0:
        return np.zeros_like(np.asarray(beta, dtype=np.float64)) if np.ndim(beta) else 0.0
    return huber(b2 * np.asarray(beta, dtype=np.float64)) / b2


def scaled_mc(beta, b):
    """Scaled minimax concave penalty ``|beta| - scaled_huber(beta, b)``.

    Saturates at ``1 / (2 b**2)`` once ``|beta| >= 1 / b**2``; reduces to
    ``|beta|`` for ``b == 0``.
    """
    return np.abs(beta) - scaled_huber(beta, b)


@dataclass(frozen=True)
class McpRef:
    """Parameters of the univariate MCP: tuning ``lam`` and concavity ``gamma > 1``."""

    lam: float
    gamma: float

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError(f"MCP requires gamma > 1, got {self.gamma}")
        if self.lam < 0:
            raise ValueError("MCP requires lam >= 0")


def mcp_value(beta, ref: McpRef):
    a = np.abs(np.asarray(beta, dtype=np.float64))
    lam, gamma = ref.lam, ref.gamma
    out = np.where(a <= gamma * lam, lam * a - a * a / (2 * gamma), 0.5 * gamma * lam * lam)
    return out if out.ndim else float(out)


class GramOperator:
    """Matrix-free ``coef * X^T X / n``."""

    def __init__(self, X: np.ndarray, coef: float):
        self.X = X
        self.coef = float(coef)
        self.shape = (X.shape[1], X.shape[1])

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.coef == 0.0:
            return np.zeros(self.shape[0])
        return (self.coef / self.X.shape[0]) * (self.X.T @ (self.X @ v))

    __matmul__ = matvec

    def to_dense(self) -> np.ndarray:
        return self.coef * (self.X.T @ self.X) / self.X.shape[0]


def as_dense(op) -> np.ndarray:
    return op if isinstance(op, np.ndarray) else op.to_dense()


@dataclass(frozen=True, eq=False)
class GmcConfig:
    """Group GMC hyper-parameters.

    Parameters
    ----------
    alpha : float
        Convexity-preserving parameter in [0, 1]; sets ``lam B^T B = alpha X^T X``.
        Ignored when ``btb`` is given.
    lam : float
        Tuning parameter.
    btb : ndarray, optional
        A user-supplied ``B^T B`` (p x p, symmetric).  Convexity is then the
        caller's responsibility; see :func:`grgmc.pdhg.check_convexity`.
    gram_mode : {"auto", "explicit", "operator"}
        Cached dense Gram matrix or matrix-free products.  ``auto`` picks the
        dense form for ``p <= 2000``.
    """

    alpha: float = 0.5
    lam: float = 0.0
    btb: np.ndarray | None = None
    gram_mode: str = "auto"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.lam >= 0.0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.gram_mode not in ("auto", "explicit", "operator"):
            raise ValueError(f"unknown gram_mode '{self.gram_mode}'")
        if self.btb is not None:
            btb = np.asarray(self.btb, dtype=np.float64)
            if btb.ndim != 2 or btb.shape[0] != btb.shape[1]:
                raise ValueError("btb must be a square matrix")
            if not np.allclose(btb, btb.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(btb).max())):
                raise ValueError("btb must be symmetric")
            object.__setattr__(self, "btb", 0.5 * (btb + btb.T))

    def with_lam(self, lam: float) -> "GmcConfig":
        return GmcConfig(self.alpha, float(lam), self.btb, self.gram_mode)

    def explicit(self, design: GroupedDesign) -> bool:
        if self.btb is not None or self.gram_mode == "explicit":
            return True
        if self.gram_mode == "operator":
            return False
        return design.p <= EXPLICIT_GRAM_MAX_P

    def curvature(self, design: GroupedDesign):
        """The coupling operator ``Z = (lam/n) B^T B``."""
        if self.btb is not None:
            _check_shape(self.btb, design)
            return (self.lam / design.n) * self.btb
        if self.explicit(design):
            return self.alpha * design.gram
        return GramOperator(design.X, self.alpha)

    def loss_curvature(self, design: GroupedDesign):
        """Hessian of the primal smooth part, ``X^T X / n - Z``."""
        if self.btb is not None:
            return design.gram - self.curvature(design)
        if self.explicit(design):
            return (1.0 - self.alpha) * design.gram
        return GramOperator(design.X, 1.0 - self.alpha)

    def penalty_metric(self, design: GroupedDesign):
        """``B^T B / n``, or ``None`` when ``B`` is unbounded (default ``B`` at ``lam = 0``)."""
        if self.btb is not None:
            _check_shape(self.btb, design)
            return self.btb / design.n
        if self.alpha == 0.0:
            return np.zeros((design.p, design.p)) if self.explicit(design) else GramOperator(design.X, 0.0)
        if self.lam == 0.0:
            return None
        coef = self.alpha / self.lam
        return coef * design.gram if self.explicit(design) else GramOperator(design.X, coef)


def _check_shape(btb, design):
    if btb.shape != (design.p, design.p):
        raise ValueError(f"btb has shape {btb.shape}, expected ({design.p}, {design.p})")


PENALTY_FBS = FbsOptions(max_iter=5000, tol=1e-10)


def huber_minimizer(beta, design: GroupedDesign, metric, opts: FbsOptions | None = None):
    """Minimize ``sum_j K_j ||v_j|| + (beta - v)' metric (beta - v) / 2`` over ``v``.

    Returns ``(v, value)``.  This is the inner problem of the generalized
    Huber function, with ``metric = B^T B / n``.
    """
    beta = np.asarray(beta, dtype=np.float64)
    K = design.weights
    if not np.any(beta):
        return np.zeros_like(beta), 0.0
    Mb = metric @ beta
    x, _ = fbs_quadratic(metric, Mb, K, design.starts, beta, opts=opts or PENALTY_FBS)
    Mx = metric @ x
    d = beta - x
    value = group_norm_sum(x, K, design.starts) + 0.5 * float(d @ (Mb - Mx))
    return x, value


def group_gen_huber(beta, design: GroupedDesign, cfg: GmcConfig, opts: FbsOptions | None = None) -> float:
    """Generalized group Huber term ``min_v {sum_j K_j ||v_j|| + ||B(beta - v)||^2 / (2n)}``.

    Exactly 0 for ``alpha == 0`` (default ``B``) or ``beta == 0``.  For the
    default ``B`` at ``lam == 0`` the quadratic becomes an indicator of
    ``v == beta`` and the value is the group-lasso penalty.
    """
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (design.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({design.p},)")
    if not np.any(beta) or (cfg.btb is None and cfg.alpha == 0.0):
        return 0.0
    metric = cfg.penalty_metric(design)
    if metric is None:
        return group_norm_sum(beta, design.weights, design.starts)
    return huber_minimizer(beta, design, metric, opts)[1]


def group_gmc_penalty(beta, design: GroupedDesign, cfg: GmcConfig, opts: FbsOptions | None = None) -> float:
    """Group GMC penalty; lies in ``[0, sum_j K_j ||beta_j||]``."""
    beta = np.asarray(beta, dtype=np.float64)
    lasso = group_norm_sum(beta, design.weights, design.starts)
    value = lasso - group_gen_huber(beta, design, cfg, opts)
    return min(max(value, 0.0), lasso)


def objective_value(beta, design: GroupedDesign, y, cfg: GmcConfig, opts: FbsOptions | None = None) -> float:
    """``||y - X beta||^2 / (2n) + lam * Phi(beta)``."""
    y = check_response(design, y)
    beta = np.asarray(beta, dtype=np.float64)
    r = y - design.X @ beta
    loss = 0.5 * float(r @ r) / design.n
    if cfg.lam == 0.0:
        return loss
    return loss + cfg.lam * group_gmc_penalty(beta, design, cfg, opts)
