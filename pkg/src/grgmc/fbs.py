"""Forward-backward splitting with spectral stepsizes and nonmonotone backtracking.

Solves ``minimize m(x) + h(x)`` for smooth convex ``m`` and prox-friendly
convex ``h``.  Each iteration takes a gradient step on ``m`` followed by the
prox of ``h``::

    x_hat = x - t * grad_m(x)
    x_new = prox_{t h}(x_hat)

The stepsize is the adaptive Barzilai-Borwein rule (the "minimum residual"
step when it is large enough, otherwise the "steepest descent" step minus
half of it).  A candidate is accepted when ``m`` at the new point lies below
the local quadratic model anchored at the largest of the last ``window``
values of ``m``; otherwise the step shrinks.

Two entry points share the algorithm:

* :func:`fbs_solve` takes arbitrary oracles (:class:`FbsProblem`).
* :func:`fbs_quadratic` handles ``m(x) = x'Qx/2 - b'x`` and ``h`` a weighted
  sum of group norms with a compiled kernel; it is the hot path used inside
  the primal-dual solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np


class ConvergenceError(RuntimeError):
    """Iteration limit reached before the stopping rule was met."""

    def __init__(self, message, residual=float("nan"), x=None):
        super().__init__(message)
        self.residual = residual
        self.x = x


class DivergenceError(FloatingPointError):
    """NaN or Inf appeared in the iterates."""


@dataclass
class FbsProblem:
    """``minimize smooth(x) + nonsmooth(x)`` with the oracles FBS needs."""

    smooth: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    nonsmooth: Callable[[np.ndarray], float]
    prox: Callable[[np.ndarray, float], np.ndarray]
    x0: np.ndarray


@dataclass
class FbsOptions:
    max_iter: int = 2000
    tol: float = 1e-8
    window: int = 10
    shrink: float = 0.5
    decrease: float = 1e-4
    stable_iters: int = 3
    step: float | None = None  # initial stepsize; estimated from gradients when None
    raise_on_failure: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")


@dataclass
class FbsReport:
    iterations: int
    residual: float
    converged: bool
    objective: float
    step: float
    trace: list[float] = field(default_factory=list)


_STATUS_OK, _STATUS_MAXITER, _STATUS_NAN = 0, 1, 2
_MAX_BACKTRACKS = 60
_TINY = 1e-300


def _probe_directions(x0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(0x5EED)
    scale = max(1e-2, 1e-2 * float(np.linalg.norm(x0)))
    w1 = rng.standard_normal(x0.shape)
    w2 = rng.standard_normal(x0.shape)
    w1 *= scale / np.linalg.norm(w1)
    w2 *= scale / np.linalg.norm(w2)
    if np.linalg.norm(w1 - w2) < 1e-8 * scale:  # same point (likely in one dimension)
        w2 = -w1
    return x0 + w1, x0 + w2


def estimate_step(grad: Callable, x0: np.ndarray) -> float:
    """``1 / L`` with ``L`` the gradient difference quotient between two random points near ``x0``."""
    xa, xb = _probe_directions(np.asarray(x0, dtype=np.float64))
    L = np.linalg.norm(grad(xa) - grad(xb)) / np.linalg.norm(xa - xb)
    return 1.0 / L if L > 0 and np.isfinite(L) else 1.0


def _bb_step(s, yy, t):
    ss, sy, yyy = float(s @ s), float(s @ yy), float(yy @ yy)
    if sy <= 0 or yyy <= 0 or ss <= 0:
        return 1.5 * t
    t_sd = ss / sy
    t_mr = sy / yyy
    t_new = t_mr if 2.0 * t_mr > t_sd else t_sd - 0.5 * t_mr
    if not (t_new > 0 and math.isfinite(t_new)):
        return 1.5 * t
    return t_new


def fbs_solve(problem: FbsProblem, opts: FbsOptions | None = None) -> tuple[np.ndarray, FbsReport]:
    """Minimize ``problem.smooth + problem.nonsmooth``.

    Returns the final iterate and a :class:`FbsReport`.  Convergence requires
    the normalized subgradient residual

        ``||grad_m(x_new) + (x_hat - x_new) / t|| / max(||grad_m(x_new)||, ||(x_hat - x_new) / t||)``

    to fall below ``opts.tol`` while the relative objective change has stayed
    below ``opts.tol`` for ``opts.stable_iters`` consecutive iterations.

    Raises
    ------
    ConvergenceError
        Iteration limit hit (only when ``opts.raise_on_failure``).
    DivergenceError
        Non-finite iterate.
    """
    opts = opts or FbsOptions()
    x = np.array(problem.x0, dtype=np.float64)
    g = problem.grad(x)
    fm = problem.smooth(x)
    t = opts.step if opts.step is not None else estimate_step(problem.grad, x)
    F_old = fm + problem.nonsmooth(x)
    history = [fm]
    trace = [F_old]
    stable = 0
    rel = math.inf
    for it in range(1, opts.max_iter + 1):
        m_ref = max(history[-opts.window:])
        for _ in range(_MAX_BACKTRACKS):
            x_hat = x - t * g
            x_new = problem.prox(x_hat, t)
            dx = x_new - x
            fm_new = problem.smooth(x_new)
            bound = m_ref + float(dx @ g) + (1.0 - opts.decrease) * float(dx @ dx) / (2.0 * t)
            if fm_new <= bound + 1e-12 * abs(fm_new):
                break
            t *= opts.shrink
        g_new = problem.grad(x_new)
        if not (np.all(np.isfinite(x_new)) and np.isfinite(fm_new)):
            raise DivergenceError("divergence: non-finite iterate in forward-backward splitting")
        sub = (x_hat - x_new) / t
        r = float(np.linalg.norm(g_new + sub))
        rel = r / max(float(np.linalg.norm(g_new)), float(np.linalg.norm(sub)), _TINY)
        F_new = fm_new + problem.nonsmooth(x_new)
        change = abs(F_new - F_old) / max(abs(F_old), _TINY)
        stable = stable + 1 if change <= opts.tol else 0
        t_next = _bb_step(dx, g_new - g, t)
        x, g, fm, F_old = x_new, g_new, fm_new, F_new
        history.append(fm)
        trace.append(F_new)
        if rel <= opts.tol and stable >= opts.stable_iters:
            return x, FbsReport(it, rel, True, F_new, t, trace)
        t = t_next
    report = FbsReport(opts.max_iter, rel, False, F_old, t, trace)
    if opts.raise_on_failure:
        raise ConvergenceError(
            f"forward-backward splitting did not converge in {opts.max_iter} iterations "
            f"(residual {rel:.3e})", rel, x)
    return x, report


# --------------------------------------------------------------------------
# quadratic + group norm kernel


@numba.njit(cache=True)
def _symv(M, x, out):
    p = x.shape[0]
    for i in range(p):
        acc = 0.0
        for k in range(p):
            acc += M[i, k] * x[k]
        out[i] = acc


@numba.njit(cache=True)
def _fbs_quad_kernel(M, shift, b, thr, starts, x, t, tol, max_iter, window,
                     shrink, decrease, stable_iters):
    # minimize 0.5 x'(M + shift I)x - b'x + sum_j thr_j ||x_j||; x is updated in place
    p = x.shape[0]
    Mx = np.empty(p)
    g = np.empty(p)
    x_hat = np.empty(p)
    x_new = np.empty(p)
    Mx_new = np.empty(p)
    g_new = np.empty(p)
    hist = np.full(window, -np.inf)

    _symv(M, x, Mx)
    fm = 0.0
    for i in range(p):
        g[i] = Mx[i] + shift * x[i] - b[i]
        fm += x[i] * (0.5 * (Mx[i] + shift * x[i]) - b[i])
    F_old = fm + _weighted_norms(x, thr, starts)
    hist[0] = fm
    pos = 1
    stable = 0
    rel = np.inf
    for it in range(1, max_iter + 1):
        m_ref = -np.inf
        for w in range(window):
            if hist[w] > m_ref:
                m_ref = hist[w]
        fm_new = 0.0
        for _ in range(60):
            for i in range(p):
                x_hat[i] = x[i] - t * g[i]
            _prox_scaled(x_hat, thr, t, starts, x_new)
            _symv(M, x_new, Mx_new)
            fm_new = 0.0
            dxg = 0.0
            dxdx = 0.0
            for i in range(p):
                fm_new += x_new[i] * (0.5 * (Mx_new[i] + shift * x_new[i]) - b[i])
                d = x_new[i] - x[i]
                dxg += d * g[i]
                dxdx += d * d
            bound = m_ref + dxg + (1.0 - decrease) * dxdx / (2.0 * t)
            if fm_new <= bound + 1e-12 * abs(fm_new):
                break
            t *= shrink
        r2 = 0.0
        gn2 = 0.0
        sn2 = 0.0
        ss = 0.0
        sy = 0.0
        yy = 0.0
        for i in range(p):
            g_new[i] = Mx_new[i] + shift * x_new[i] - b[i]
            sub = (x_hat[i] - x_new[i]) / t
            r2 += (g_new[i] + sub) ** 2
            gn2 += g_new[i] ** 2
            sn2 += sub * sub
            s = x_new[i] - x[i]
            yv = g_new[i] - g[i]
            ss += s * s
            sy += s * yv
            yy += yv * yv
        if not np.isfinite(fm_new) or not np.isfinite(r2):
            return it, np.nan, t, 2, fm_new
        denom = max(np.sqrt(gn2), np.sqrt(sn2), 1e-300)
        rel = np.sqrt(r2) / denom
        F_new = fm_new + _weighted_norms(x_new, thr, starts)
        change = abs(F_new - F_old) / max(abs(F_old), 1e-300)
        if change <= tol:
            stable += 1
        else:
            stable = 0
        if sy <= 0.0 or yy <= 0.0 or ss <= 0.0:
            t_next = 1.5 * t
        else:
            t_sd = ss / sy
            t_mr = sy / yy
            t_next = t_mr if 2.0 * t_mr > t_sd else t_sd - 0.5 * t_mr
            if not (t_next > 0.0 and np.isfinite(t_next)):
                t_next = 1.5 * t
        for i in range(p):
            x[i] = x_new[i]
            g[i] = g_new[i]
        fm = fm_new
        F_old = F_new
        hist[pos % window] = fm
        pos += 1
        if rel <= tol and stable >= stable_iters:
            return it, rel, t, 0, F_new
        t = t_next
    return max_iter, rel, t, 1, F_old


@numba.njit(cache=True)
def _weighted_norms(x, thr, starts):
    total = 0.0
    for j in range(thr.shape[0]):
        sq = 0.0
        for k in range(starts[j], starts[j + 1]):
            sq += x[k] * x[k]
        total += thr[j] * np.sqrt(sq)
    return total


@numba.njit(cache=True)
def _prox_scaled(u, thr, t, starts, out):
    for j in range(thr.shape[0]):
        a, b = starts[j], starts[j + 1]
        sq = 0.0
        for k in range(a, b):
            sq += u[k] * u[k]
        norm = np.sqrt(sq)
        level = t * thr[j]
        if norm <= level:
            for k in range(a, b):
                out[k] = 0.0
        else:
            scale = 1.0 - level / norm
            for k in range(a, b):
                out[k] = scale * u[k]


def quadratic_step(M: np.ndarray, shift: float, x0: np.ndarray) -> float:
    """Initial stepsize ``1 / L`` for ``Q = M + shift I`` from two probe points."""
    xa, xb = _probe_directions(np.asarray(x0, dtype=np.float64))
    d = xa - xb
    L = np.linalg.norm(M @ d) / np.linalg.norm(d) + shift
    return 1.0 / L if L > 0 else 1.0


def fbs_quadratic(
    M, b: np.ndarray, thresholds: np.ndarray, starts: np.ndarray, x0: np.ndarray,
    *, shift: float = 0.0, opts: FbsOptions | None = None,
) -> tuple[np.ndarray, FbsReport]:
    """Minimize ``x'(M + shift I)x/2 - b'x + sum_j thresholds[j] ||x_j||_2``.

    ``M`` is a dense symmetric PSD matrix or any object with a ``matvec``
    method (matrix-free mode, which runs through :func:`fbs_solve`).
    """
    opts = opts or FbsOptions()
    b = np.ascontiguousarray(b, dtype=np.float64)
    thr = np.ascontiguousarray(thresholds, dtype=np.float64)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    if not isinstance(M, np.ndarray):
        return fbs_solve(_operator_problem(M, shift, b, thr, starts, x0), opts)
    M = np.ascontiguousarray(M, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    t = opts.step if opts.step is not None else quadratic_step(M, shift, x)
    it, rel, t, status, fval = _fbs_quad_kernel(
        M, float(shift), b, thr, starts, x, float(t), float(opts.tol), int(opts.max_iter),
        int(opts.window), float(opts.shrink), float(opts.decrease), int(opts.stable_iters))
    if status == _STATUS_NAN:
        raise DivergenceError("divergence: non-finite iterate in forward-backward splitting")
    report = FbsReport(int(it), float(rel), status == _STATUS_OK, float(fval), float(t))
    if status == _STATUS_MAXITER and opts.raise_on_failure:
        raise ConvergenceError(
            f"forward-backward splitting did not converge in {opts.max_iter} iterations "
            f"(residual {rel:.3e})", rel, x)
    return x, report


def _operator_problem(M, shift, b, thr, starts, x0) -> FbsProblem:
    def smooth(x):
        return float(0.5 * x @ (M.matvec(x) + shift * x) - b @ x)

    def grad(x):
        return M.matvec(x) + shift * x - b

    def nonsmooth(x):
        return float(_weighted_norms(x, thr, starts))

    def prox(u, t):
        out = np.empty_like(u)
        _prox_scaled(u, thr, t, starts, out)
        return out

    return FbsProblem(smooth, grad, nonsmooth, prox, np.array(x0, dtype=np.float64))
