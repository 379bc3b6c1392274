"""Reference computations that share no code with the package.

Each oracle is written from the defining formula with plain numpy (or a small
numba loop for the brute-force grids).
"""

from __future__ import annotations

import math

import numba
import numpy as np


def random_problem(rng: np.random.Generator, n: int, sizes, noise: float = 0.5, sparsity: float = 0.5):
    """Gaussian design, a sparse grouped truth and a noisy response."""
    p = int(sum(sizes))
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    pos = 0
    for s in sizes:
        if rng.random() < sparsity:
            beta[pos:pos + s] = rng.uniform(-2, 2, s)
        pos += s
    if not beta.any():
        beta[:sizes[0]] = 1.0
    y = X @ beta + noise * rng.standard_normal(n)
    return X, y, beta


def lambda_max_oracle(X, y, sizes, K):
    n = X.shape[0]
    out, pos = 0.0, 0
    for s, k in zip(sizes, K):
        out = max(out, np.linalg.norm(X[:, pos:pos + s].T @ y) / (n * k))
        pos += s
    return out


def block_shrink(u, sizes, levels):
    out = np.zeros_like(u)
    pos = 0
    for s, t in zip(sizes, levels):
        blk = u[pos:pos + s]
        nrm = np.linalg.norm(blk)
        if nrm > t:
            out[pos:pos + s] = (1 - t / nrm) * blk
        pos += s
    return out


def group_lasso_fista(X, y, sizes, K, lam, tol=1e-13, max_iter=200_000):
    """Accelerated proximal gradient on ``||y - X b||^2 / (2n) + lam sum_j K_j ||b_j||``."""
    n, p = X.shape
    G = X.T @ X / n
    c = X.T @ y / n
    L = np.linalg.eigvalsh(G)[-1]
    b = np.zeros(p)
    z = b.copy()
    t = 1.0
    levels = lam * np.asarray(K) / L
    for _ in range(max_iter):
        b_new = block_shrink(z - (G @ z - c) / L, sizes, levels)
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        z = b_new + ((t - 1) / t_new) * (b_new - b)
        if np.linalg.norm(b_new - b) <= tol * max(1.0, np.linalg.norm(b_new)):
            return b_new
        b, t = b_new, t_new
    return b


def scaled_mc_closed_form(beta, b):
    """``|beta| - b^2 beta^2 / 2`` inside ``|beta| <= 1/b^2``, ``1/(2 b^2)`` beyond."""
    a = abs(beta)
    if b == 0:
        return a
    b2 = b * b
    return a - 0.5 * b2 * a * a if a <= 1 / b2 else 0.5 / b2


def mcp_closed_form(beta, lam, gamma):
    a = abs(beta)
    return lam * a - a * a / (2 * gamma) if a <= gamma * lam else 0.5 * gamma * lam * lam


# ---------------------------------------------------------------------------
# two-dimensional single-group GMC objective


@numba.njit(cache=True)
def _huber2(b0, b1, M, evals, U, K, mu):
    # min_v K||v|| + (b - v)' M (b - v) / 2 for a 2-vector b and 2x2 PSD M.
    # v = 0 when ||M b|| <= K; otherwise v = (M + mu I)^{-1} M b with mu > 0 the
    # root of f(mu) = mu^2 sum_i w_i^2 / (e_i + mu)^2 - K^2, w = U' M b, which is
    # increasing in mu.  Safeguarded Newton from the caller's guess; returns the
    # value and the root (a warm start for the next grid point).
    m0 = M[0, 0] * b0 + M[0, 1] * b1
    m1 = M[1, 0] * b0 + M[1, 1] * b1
    if math.sqrt(m0 * m0 + m1 * m1) <= K:
        return 0.5 * (b0 * m0 + b1 * m1), mu
    w0 = U[0, 0] * m0 + U[1, 0] * m1
    w1 = U[0, 1] * m0 + U[1, 1] * m1
    a0, a1 = w0 * w0, w1 * w1
    lo, hi = 0.0, np.inf
    if not mu > 0:
        mu = 1.0
    for _ in range(200):
        q0, q1 = 1.0 / (evals[0] + mu), 1.0 / (evals[1] + mu)
        S = a0 * q0 * q0 + a1 * q1 * q1
        f = mu * mu * S - K * K
        if f < 0:
            lo = mu
        else:
            hi = mu
        if abs(f) <= 1e-15 * K * K:
            break
        df = 2 * mu * S - 2 * mu * mu * (a0 * q0 ** 3 + a1 * q1 ** 3)
        new = mu - f / df if df > 0 else -1.0
        if not (lo < new < hi):
            new = 0.5 * (lo + hi) if hi < np.inf else 2.0 * mu
        if abs(new - mu) <= 1e-15 * mu:
            mu = new
            break
        mu = new
    z0 = w0 / (evals[0] + mu)
    z1 = w1 / (evals[1] + mu)
    v0 = U[0, 0] * z0 + U[0, 1] * z1
    v1 = U[1, 0] * z0 + U[1, 1] * z1
    d0, d1 = b0 - v0, b1 - v1
    quad = 0.5 * (d0 * (M[0, 0] * d0 + M[0, 1] * d1) + d1 * (M[1, 0] * d0 + M[1, 1] * d1))
    return K * math.sqrt(v0 * v0 + v1 * v1) + quad, mu


@numba.njit(cache=True)
def _objective(b0, b1, G, c, yy, M, evals, U, K, lam, mu):
    loss = 0.5 * yy - (c[0] * b0 + c[1] * b1) + 0.5 * (
        b0 * (G[0, 0] * b0 + G[0, 1] * b1) + b1 * (G[1, 0] * b0 + G[1, 1] * b1))
    if lam == 0.0:
        return loss, mu
    h, mu = _huber2(b0, b1, M, evals, U, K, mu)
    return loss + lam * (K * math.sqrt(b0 * b0 + b1 * b1) - h), mu


@numba.njit(cache=True)
def gmc2_objective(b0, b1, G, c, yy, M, evals, U, K, lam):
    """``||y - X b||^2/(2n) + lam (K ||b|| - huber)`` from ``G = X'X/n``, ``c = X'y/n``, ``yy = y'y/n``."""
    return _objective(b0, b1, G, c, yy, M, evals, U, K, lam, 1.0)[0]


@numba.njit(cache=True)
def _grid_min(G, c, yy, M, evals, U, K, lam, lo, step, count):
    best = np.inf
    bi, bj = 0, 0
    for i in range(count):
        b0 = lo + i * step
        mu = 1.0
        for j in range(count):
            b1 = lo + j * step
            f, mu = _objective(b0, b1, G, c, yy, M, evals, U, K, lam, mu)
            if f < best:
                best, bi, bj = f, i, j
    return best, lo + bi * step, lo + bj * step


class Gmc2:
    """Objective of a 2-column, single-group problem with ``B^T B / n = M``."""

    def __init__(self, X, y, M, lam, K=math.sqrt(2.0)):
        n = X.shape[0]
        self.G = X.T @ X / n
        self.c = X.T @ y / n
        self.yy = float(y @ y) / n
        self.M = np.ascontiguousarray(M, dtype=np.float64)
        evals, U = np.linalg.eigh(self.M)
        self.evals = np.ascontiguousarray(evals)
        self.U = np.ascontiguousarray(U)
        self.K = float(K)
        self.lam = float(lam)

    def __call__(self, b):
        return gmc2_objective(float(b[0]), float(b[1]), self.G, self.c, self.yy, self.M,
                              self.evals, self.U, self.K, self.lam)

    def grid_min(self, lo=-3.0, hi=3.0, step=1e-3):
        count = int(round((hi - lo) / step)) + 1
        f, b0, b1 = _grid_min(self.G, self.c, self.yy, self.M, self.evals, self.U, self.K,
                              self.lam, lo, step, count)
        return f, np.array([b0, b1])


def grid_huber2(beta, M, K, lo=-3.0, hi=3.0, step=1e-3):
    """Inner minimum over ``v`` on a square grid (chunked numpy)."""
    axis = np.arange(lo, hi + 0.5 * step, step)
    best = np.inf
    for chunk in np.array_split(axis, 20):
        v0, v1 = np.meshgrid(chunk, axis, indexing="ij")
        d0, d1 = beta[0] - v0, beta[1] - v1
        val = K * np.hypot(v0, v1) + 0.5 * (M[0, 0] * d0 * d0 + 2 * M[0, 1] * d0 * d1 + M[1, 1] * d1 * d1)
        best = min(best, float(val.min()))
    return best


def central_gradient(f, x, rel_step=1e-6):
    h = rel_step * max(1.0, float(np.linalg.norm(x)))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
