"""Primal-dual hybrid gradient solver for the group GMC problem.

The estimator minimizes ``||y - X beta||^2 / (2n) + lam * Phi(beta)``.  Writing the
penalty's inner minimum as a maximum over a dual block ``v`` gives the
saddle-point problem

    min_beta max_v  f(beta) + v' Z beta - g(v)

with ``Z = (lam/n) B^T B`` and

    f(beta) = ||y - X beta||^2 / (2n) - beta' Z beta / 2 + lam sum_j K_j ||beta_j||
    g(v)    = v' Z v / 2 + lam sum_j K_j ||v_j||.

Both are convex whenever ``X^T X >= lam B^T B``.  Each PDHG iteration solves
the two proximal subproblems with forward-backward splitting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np

from .design import GroupedDesign, check_response
from .fbs import ConvergenceError, DivergenceError, FbsOptions, _fbs_quad_kernel, fbs_quadratic
from .penalties import GmcConfig

logger = logging.getLogger(__name__)


class ConvexityError(ValueError):
    """The convexity-preserving condition ``X^T X >= lam B^T B`` fails."""


class ConvexityCheck(NamedTuple):
    ok: bool
    min_eig: float


def check_convexity(design: GroupedDesign, cfg: GmcConfig, margin: bool = False) -> ConvexityCheck:
    """Test ``X^T X - lam B^T B >= 0``.

    With the default ``lam B^T B = alpha X^T X`` this holds by construction for
    ``alpha <= 1``; the smallest eigenvalue ``(1 - alpha) * eig_min(X^T X)`` is
    only computed when ``margin`` is true (otherwise ``nan``).  For a supplied
    ``B^T B`` the eigenvalue is always computed.
    """
    if cfg.btb is None:
        if not margin:
            return ConvexityCheck(True, math.nan)
        eig = float(np.linalg.eigvalsh(design.X.T @ design.X)[0])
        return ConvexityCheck(True, (1.0 - cfg.alpha) * eig)
    diff = design.X.T @ design.X - cfg.lam * cfg.btb
    eig = float(np.linalg.eigvalsh(0.5 * (diff + diff.T))[0])
    scale = max(1.0, float(np.abs(diff).max()))
    return ConvexityCheck(eig >= -1e-10 * scale, eig)


def spectral_norm(op, p: int, tol: float = 1e-12, max_iter: int = 5000) -> float:
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    ``op`` is a dense matrix or anything supporting ``op @ x``.  The start
    vector is a fixed, slightly tilted all-ones vector so runs are
    deterministic.
    """
    x = np.ones(p) + np.linspace(0.0, 0.5, p)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = op @ x
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            return 0.0
        new = float(x @ y)
        x = y / ny
        if abs(new - est) <= tol * abs(new):
            return new
        est = new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


@dataclass
class PdhgOptions:
    """Outer-loop settings.

    ``balance_ratio``, ``adapt_init`` and ``adapt_decay`` drive the
    residual-balancing stepsize rule: when one residual exceeds
    ``balance_ratio`` times the other, the stepsize on that side grows by
    ``1 / (1 - a)`` and the other shrinks by ``(1 - a)``; ``a`` starts at
    ``adapt_init`` and is multiplied by ``adapt_decay`` after each change.
    """

    max_iter: int = 10000
    tol: float = 1e-6
    adaptive: bool = True
    balance_ratio: float = 10.0
    adapt_init: float = 0.3
    adapt_decay: float = 0.95
    step_product: float = 0.95
    inner_tol: float | None = None
    inner_max_iter: int = 2000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.step_product < 1:
            raise ValueError("step_product must lie in (0, 1)")

    @property
    def resolved_inner_tol(self) -> float:
        return self.inner_tol if self.inner_tol is not None else max(0.1 * self.tol, 1e-10)


@dataclass
class SaddleState:
    beta: np.ndarray
    v: np.ndarray
    tau: float
    sigma: float
    primal_residual: float = math.inf
    dual_residual: float = math.inf
    iterations: int = 0


@dataclass
class PdhgReport:
    converged: bool
    iterations: int
    primal_residual: float
    dual_residual: float
    inner_iterations: int
    adaptations: int
    state: SaddleState
    notes: list[str] = field(default_factory=list)


class Operators:
    """Quantities shared by every solve on one (design, y, B^T B) triple."""

    def __init__(self, design: GroupedDesign, y: np.ndarray, cfg: GmcConfig):
        self.design = design
        self.y = y
        self.c = design.X.T @ y / design.n
        Z = cfg.curvature(design)
        H = cfg.loss_curvature(design)
        self.explicit = isinstance(Z, np.ndarray)
        self.Z = np.ascontiguousarray(Z) if self.explicit else Z
        self.H = np.ascontiguousarray(H) if self.explicit else H
        p = design.p
        self.z_norm = spectral_norm(self.Z, p)
        self.h_norm = spectral_norm(self.H, p)
        self.btb_dependent = cfg.btb is not None

    def matches(self, design, y) -> bool:
        return self.design is design and not self.btb_dependent and np.array_equal(self.y, y)


def pdhg_solve(
    design: GroupedDesign,
    y,
    cfg: GmcConfig,
    opts: PdhgOptions | None = None,
    warm: SaddleState | None = None,
    ops: Operators | None = None,
    check: bool = True,
) -> tuple[np.ndarray, np.ndarray, PdhgReport]:
    """Fit the group GMC estimator at ``cfg.lam``.

    Returns ``(beta, v, report)``.  ``warm`` restarts from a previous saddle
    state (iterates and stepsizes); ``ops`` reuses cached operators across a
    path.  When the iteration limit is reached the iterate with the smallest
    residual is returned and ``report.converged`` is false.

    Raises
    ------
    ConvexityError
        A supplied ``B^T B`` violates ``X^T X >= lam B^T B``.
    DivergenceError
        Non-finite iterates.
    """
    opts = opts or PdhgOptions()
    y = check_response(design, y)
    if check and cfg.btb is not None:
        conv = check_convexity(design, cfg)
        if not conv.ok:
            raise ConvexityError(f"convexity condition violated (min eigenvalue {conv.min_eig:.3e})")
    if ops is None or not ops.matches(design, y):
        ops = Operators(design, y, cfg)
    p = design.p
    starts = design.starts
    thr = cfg.lam * design.weights
    Z, H, c = ops.Z, ops.H, ops.c
    z_zero = ops.z_norm == 0.0

    if warm is not None:
        beta = np.array(warm.beta, dtype=np.float64)
        v = np.array(warm.v, dtype=np.float64)
        tau, sigma = float(warm.tau), float(warm.sigma)
    else:
        beta = np.zeros(p)
        v = np.zeros(p)
        tau, sigma = _initial_steps(ops, opts)
    if not z_zero and tau * sigma * ops.z_norm**2 > opts.step_product:
        shrink = math.sqrt(opts.step_product / (tau * sigma * ops.z_norm**2))
        tau, sigma = tau * shrink, sigma * shrink
    if z_zero:
        v[:] = 0.0

    notes = ["adaptive stepsizes: residual balancing (locally chosen constants)"] if opts.adaptive else []
    if cfg.btb is None and cfg.alpha == 1.0 and design.n <= p:
        notes.append("uniqueness not guaranteed (n <= p, alpha = 1)")

    inner = FbsOptions(max_iter=opts.inner_max_iter, tol=opts.resolved_inner_tol, raise_on_failure=False)
    if ops.explicit:
        out = _pdhg_kernel(
            H, Z, c, thr, starts, beta, v, tau, sigma, ops.h_norm, ops.z_norm, z_zero,
            float(opts.tol), int(opts.max_iter), bool(opts.adaptive), float(opts.balance_ratio),
            float(opts.adapt_init), float(opts.adapt_decay), float(inner.tol), int(inner.max_iter),
            int(inner.window), float(inner.shrink), float(inner.decrease), int(inner.stable_iters))
        it, pr, dr, tau, sigma, inner_its, adaptations, status = out
        if status == _DIVERGED:
            raise DivergenceError("divergence: non-finite residual in PDHG")
        converged = status == _CONVERGED
    else:
        beta, v, it, pr, dr, tau, sigma, inner_its, adaptations, converged = _pdhg_loop(
            Z, thr, starts, beta, v, tau, sigma, ops, z_zero, opts, inner)
    if not converged:
        logger.warning("PDHG reached %d iterations without converging (lam=%g)", opts.max_iter, cfg.lam)
    state = SaddleState(beta.copy(), v.copy(), tau, sigma, pr, dr, it)
    report = PdhgReport(converged, it, pr, dr, inner_its, adaptations, state, notes)
    return beta, v, report


def subproblem(ops: Operators, which: str, center: np.ndarray, step: float):
    """Quadratic data ``(M, b, shift)`` of one PDHG proximal subproblem.

    The subproblem is ``minimize x'(M + shift I)x/2 - b'x + lam sum_j K_j ||x_j||``.
    For ``which="beta"`` it is the primal step around ``center = beta - tau Z v``
    with ``step = tau``; for ``which="v"`` the dual step around
    ``center = v + sigma Z (2 beta_new - beta)`` with ``step = sigma``.
    """
    if which == "beta":
        return ops.H, ops.c + center / step, 1.0 / step
    if which == "v":
        return ops.Z, center / step, 1.0 / step
    raise ValueError(f"unknown subproblem '{which}'")


def subproblem_smooth(ops: Operators, which: str, center: np.ndarray, step: float, x: np.ndarray) -> float:
    """Smooth part of a subproblem, written out from its definition (up to a constant).

    ``beta``: ``||y - X x||^2 / (2n) - x'Zx/2 + ||x - center||^2 / (2 step)``;
    ``v``: ``x'Zx/2 + ||x - center||^2 / (2 step)``.
    """
    d = x - center
    quad = 0.5 * float(x @ (ops.Z @ x))
    prox_term = 0.5 * float(d @ d) / step
    if which == "beta":
        r = ops.y - ops.design.X @ x
        return 0.5 * float(r @ r) / ops.design.n - quad + prox_term
    if which == "v":
        return quad + prox_term
    raise ValueError(f"unknown subproblem '{which}'")


def _pdhg_loop(Z, thr, starts, beta, v, tau, sigma, ops, z_zero, opts, inner):
    # matrix-free variant of _pdhg_kernel
    Zb = Z @ beta
    Zv = Z @ v
    a = opts.adapt_init
    adaptations = 0
    inner_its = 0
    best = (math.inf, beta.copy(), v.copy(), math.inf, math.inf)
    pr = dr = math.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        M, b, shift = subproblem(ops, "beta", beta - tau * Zv, tau)
        inner.step = 1.0 / (ops.h_norm + shift)
        beta_new, rep = fbs_quadratic(M, b, thr, starts, beta, shift=shift, opts=inner)
        inner_its += rep.iterations
        Zb_new = Z @ beta_new
        if z_zero:
            v_new, Zv_new = v, Zv
        else:
            M, b, shift = subproblem(ops, "v", v + sigma * (2.0 * Zb_new - Zb), sigma)
            inner.step = 1.0 / (ops.z_norm + shift)
            v_new, rep = fbs_quadratic(M, b, thr, starts, v, shift=shift, opts=inner)
            inner_its += rep.iterations
            Zv_new = Z @ v_new
        P = (beta - beta_new) / tau + (Zv_new - Zv)
        D = (v - v_new) / sigma + (Zb_new - Zb)
        pr = float(np.linalg.norm(P))
        dr = float(np.linalg.norm(D))
        if not (math.isfinite(pr) and math.isfinite(dr)):
            raise DivergenceError("divergence: non-finite residual in PDHG")
        beta, v, Zb, Zv = beta_new, v_new, Zb_new, Zv_new
        score = max(pr, dr) / (1.0 + float(np.linalg.norm(beta)))
        if score < best[0]:
            best = (score, beta, v, pr, dr)
        if score <= opts.tol:
            return beta, v, it, pr, dr, tau, sigma, inner_its, adaptations, True
        if opts.adaptive:
            if pr > opts.balance_ratio * dr:
                tau, sigma = tau / (1.0 - a), sigma * (1.0 - a)
                a *= opts.adapt_decay
                adaptations += 1
            elif dr > opts.balance_ratio * pr:
                tau, sigma = tau * (1.0 - a), sigma / (1.0 - a)
                a *= opts.adapt_decay
                adaptations += 1
    _, beta, v, pr, dr = best
    return beta, v, it, pr, dr, tau, sigma, inner_its, adaptations, False


_CONVERGED, _MAXITER, _DIVERGED = 0, 1, 2


@numba.njit(cache=True)
def _matvec(M, x, out):
    for i in range(x.shape[0]):
        acc = 0.0
        for k in range(x.shape[0]):
            acc += M[i, k] * x[k]
        out[i] = acc


@numba.njit(cache=True)
def _pdhg_kernel(H, Z, c, thr, starts, beta, v, tau, sigma, h_norm, z_norm, z_zero,
                 tol, max_iter, adaptive, ratio, a, decay, in_tol, in_max, window,
                 shrink, decrease, stable_iters):
    # dense-mode PDHG; beta and v are overwritten with the returned iterate
    p = beta.shape[0]
    Zb = np.empty(p)
    Zv = np.empty(p)
    _matvec(Z, beta, Zb)
    _matvec(Z, v, Zv)
    rhs = np.empty(p)
    beta_new = np.empty(p)
    v_new = np.empty(p)
    Zb_new = np.empty(p)
    Zv_new = np.empty(p)
    best_beta = beta.copy()
    best_v = v.copy()
    best_score = np.inf
    best_pr = np.inf
    best_dr = np.inf
    inner_its = 0
    adaptations = 0
    pr = np.inf
    dr = np.inf
    for it in range(1, max_iter + 1):
        for i in range(p):
            rhs[i] = c[i] + (beta[i] - tau * Zv[i]) / tau
            beta_new[i] = beta[i]
        res = _fbs_quad_kernel(H, 1.0 / tau, rhs, thr, starts, beta_new, 1.0 / (h_norm + 1.0 / tau),
                               in_tol, in_max, window, shrink, decrease, stable_iters)
        if res[3] == 2:
            return it, np.nan, np.nan, tau, sigma, inner_its, adaptations, 2
        inner_its += res[0]
        _matvec(Z, beta_new, Zb_new)
        if z_zero:
            for i in range(p):
                v_new[i] = v[i]
                Zv_new[i] = Zv[i]
        else:
            for i in range(p):
                rhs[i] = (v[i] + sigma * (2.0 * Zb_new[i] - Zb[i])) / sigma
                v_new[i] = v[i]
            res = _fbs_quad_kernel(Z, 1.0 / sigma, rhs, thr, starts, v_new, 1.0 / (z_norm + 1.0 / sigma),
                                   in_tol, in_max, window, shrink, decrease, stable_iters)
            if res[3] == 2:
                return it, np.nan, np.nan, tau, sigma, inner_its, adaptations, 2
            inner_its += res[0]
            _matvec(Z, v_new, Zv_new)
        pr2 = 0.0
        dr2 = 0.0
        bn2 = 0.0
        for i in range(p):
            P = (beta[i] - beta_new[i]) / tau + (Zv_new[i] - Zv[i])
            D = (v[i] - v_new[i]) / sigma + (Zb_new[i] - Zb[i])
            pr2 += P * P
            dr2 += D * D
            beta[i] = beta_new[i]
            v[i] = v_new[i]
            Zb[i] = Zb_new[i]
            Zv[i] = Zv_new[i]
            bn2 += beta[i] * beta[i]
        pr = np.sqrt(pr2)
        dr = np.sqrt(dr2)
        if not (np.isfinite(pr) and np.isfinite(dr)):
            return it, pr, dr, tau, sigma, inner_its, adaptations, 2
        score = max(pr, dr) / (1.0 + np.sqrt(bn2))
        if score < best_score:
            best_score = score
            best_pr = pr
            best_dr = dr
            best_beta[:] = beta
            best_v[:] = v
        if score <= tol:
            return it, pr, dr, tau, sigma, inner_its, adaptations, 0
        if adaptive:
            if pr > ratio * dr:
                tau /= 1.0 - a
                sigma *= 1.0 - a
                a *= decay
                adaptations += 1
            elif dr > ratio * pr:
                tau *= 1.0 - a
                sigma /= 1.0 - a
                a *= decay
                adaptations += 1
    beta[:] = best_beta
    v[:] = best_v
    return max_iter, best_pr, best_dr, tau, sigma, inner_its, adaptations, 1


def _initial_steps(ops: Operators, opts: PdhgOptions) -> tuple[float, float]:
    if ops.z_norm > 0.0:
        s = math.sqrt(opts.step_product) / ops.z_norm
        return s, s
    tau = 10.0 / ops.h_norm if ops.h_norm > 0 else 1.0
    return tau, 1.0


def _block_distance(g: np.ndarray, x: np.ndarray, thr: np.ndarray, starts: np.ndarray) -> np.ndarray:
    # distance from -g_j to the subdifferential of thr_j ||.|| at x_j
    out = np.empty(thr.shape[0])
    for j in range(thr.shape[0]):
        gj, xj = g[starts[j]:starts[j + 1]], x[starts[j]:starts[j + 1]]
        nx = np.linalg.norm(xj)
        if nx > 0:
            out[j] = np.linalg.norm(gj + thr[j] * xj / nx)
        else:
            out[j] = max(0.0, np.linalg.norm(gj) - thr[j])
    return out


def kkt_residual(beta, v, design: GroupedDesign, y, cfg: GmcConfig) -> float:
    """Violation of the first-order saddle conditions at ``(beta, v)``.

    For each group, the distance from the negative gradient of the smooth part
    (of ``f`` for ``beta``, of ``g`` for ``v``, including the coupling term) to
    the subdifferential of ``lam K_j ||.||``; returns the Euclidean norm over
    all blocks.  Zero exactly at a saddle point.
    """
    y = check_response(design, y)
    beta = np.asarray(beta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    Z = cfg.curvature(design)
    H = cfg.loss_curvature(design)
    c = design.X.T @ y / design.n
    Zv = Z @ v
    g_beta = H @ beta - c + Zv
    g_v = Zv - Z @ beta
    thr = cfg.lam * design.weights
    d1 = _block_distance(g_beta, beta, thr, design.starts)
    d2 = _block_distance(g_v, v, thr, design.starts)
    return float(math.sqrt(d1 @ d1 + d2 @ d2))
