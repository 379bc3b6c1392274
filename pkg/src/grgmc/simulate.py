"""ANOVA simulation study: data generation, support-recovery metrics, experiment driver.

Latent Gaussians ``Z_1..Z_L`` with correlation ``rho**|i-j|`` are each cut at the
standard-normal terciles into levels 0 (below the lower tercile), 1 (above the
upper tercile) and 2 (in between).  Every main effect is coded by the
indicators of levels 1 and 0 (level 2 is the baseline) and every pairwise
interaction by the four products of those indicators.  The response depends
on ``Z_1``, ``Z_2`` and their interaction only.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from . import rng
from .design import GroupedDesign
from .fbs import ConvergenceError, DivergenceError, FbsOptions
from .path import LambdaGrid, SELECTION_THRESHOLD, cross_validate, fmt, make_grid, solution_path
from .pdhg import PdhgOptions
from .penalties import GmcConfig, huber_minimizer

LATENT_STREAM, NOISE_STREAM = 1, 2

# coefficients on 1(Z1=1), 1(Z1=0), 1(Z2=1), 1(Z2=0) and the Z1:Z2 products
# (1,1), (1,0), (0,1), (0,0)
MAIN_Z1 = (3.0, 2.0)
MAIN_Z2 = (3.0, 2.0)
INTERACTION_Z1Z2 = (1.0, 1.5, 2.0, 2.5)


@dataclass
class SimDataset:
    design: GroupedDesign
    y: np.ndarray
    beta_star: np.ndarray
    sigma: float
    rho: float
    snr: float
    seed: int
    levels: np.ndarray  # (n, L) trichotomized latents

    @property
    def true_groups(self) -> np.ndarray:
        return np.flatnonzero(self.design.block_norms(self.beta_star) > 0)


def trichotomize(z: np.ndarray) -> np.ndarray:
    lo, hi = NormalDist().inv_cdf(1 / 3), NormalDist().inv_cdf(2 / 3)
    levels = np.full(z.shape, 2, dtype=np.int8)
    levels[z < lo] = 0
    levels[z > hi] = 1
    return levels


def anova_design(levels: np.ndarray) -> GroupedDesign:
    """Dummy-coded main effects followed by all pairwise interactions."""
    n, L = levels.shape
    ind1 = (levels == 1).astype(np.float64)
    ind0 = (levels == 0).astype(np.float64)
    cols, names, sizes, groups = [], [], [], []
    for i in range(L):
        cols += [ind1[:, i], ind0[:, i]]
        names += [f"Z{i + 1}=1", f"Z{i + 1}=0"]
        sizes.append(2)
        groups.append(f"Z{i + 1}")
    for i, j in itertools.combinations(range(L), 2):
        for a, ia in (("1", ind1), ("0", ind0)):
            for b, jb in (("1", ind1), ("0", ind0)):
                cols.append(ia[:, i] * jb[:, j])
                names.append(f"Z{i + 1}={a}:Z{j + 1}={b}")
        sizes.append(4)
        groups.append(f"Z{i + 1}:Z{j + 1}")
    return GroupedDesign(np.column_stack(cols), sizes, None, tuple(names), tuple(groups))


def anova_truth(design: GroupedDesign) -> np.ndarray:
    beta = np.zeros(design.p)
    L = sum(1 for s in design.group_sizes if s == 2)
    beta[0:2] = MAIN_Z1
    beta[2:4] = MAIN_Z2
    beta[2 * L:2 * L + 4] = INTERACTION_Z1Z2  # first interaction group is Z1:Z2
    return beta


def simulate_anova(num_latent: int = 4, rho: float = 0.0, snr: float = 2.0, n: int = 100,
                   seed: int = 0) -> SimDataset:
    """Generate one ANOVA dataset with noise calibrated to the requested SNR.

    ``sigma = ||X beta*|| / (sqrt(n) * snr)`` is computed from the realized
    design, so the realized SNR matches ``snr`` up to rounding.  Draws come from
    the counter-based generator in :mod:`grgmc.rng`: latents from stream 1
    (row-major ``n x L``), noise from stream 2.
    """
    if int(num_latent) != num_latent or num_latent < 2:
        raise ValueError(f"num_latent must be an integer >= 2, got {num_latent}")
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    if not snr > 0:
        raise ValueError("snr must be positive")
    if n < 2:
        raise ValueError("n must be at least 2")
    L = int(num_latent)
    idx = np.arange(L)
    cov = rho ** np.abs(idx[:, None] - idx[None, :])
    chol = np.linalg.cholesky(cov)
    z = rng.normals(seed, LATENT_STREAM, n * L).reshape(n, L) @ chol.T
    levels = trichotomize(z)
    design = anova_design(levels)
    beta = anova_truth(design)
    signal = design.X @ beta
    sigma = float(np.linalg.norm(signal)) / (math.sqrt(n) * snr)
    y = signal + sigma * rng.normals(seed, NOISE_STREAM, n)
    return SimDataset(design, y, beta, sigma, float(rho), float(snr), int(seed), levels)


@dataclass
class MetricSet:
    mse: float
    prediction_error: float
    tp: int
    fp: int
    fn: int
    f1: float
    selected: int


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def compute_metrics(beta_hat, dataset: SimDataset) -> MetricSet:
    """Coefficient MSE, in-sample prediction error and group-level support recovery."""
    d = dataset.design
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    if beta_hat.shape != dataset.beta_star.shape:
        raise ValueError("coefficient vector has the wrong length")
    diff = beta_hat - dataset.beta_star
    fit = d.X @ diff
    chosen = d.block_norms(beta_hat) > SELECTION_THRESHOLD
    truth = d.block_norms(dataset.beta_star) > 0
    tp = int(np.sum(chosen & truth))
    fp = int(np.sum(chosen & ~truth))
    fn = int(np.sum(~chosen & truth))
    return MetricSet(float(diff @ diff) / d.p, float(fit @ fit) / d.n, tp, fp, fn,
                     f1_score(tp, fp, fn), int(chosen.sum()))


# ---------------------------------------------------------------------------
# experiment driver

CASES = {
    "C1": dict(param="snr", values=(1.0, 2.0, 3.0, 4.0, 5.0), alphas=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0)),
    "C2": dict(param="rho", values=(0.0, 0.2, 0.4, 0.6, 0.8), alphas=(0.0, 0.6)),
    "C3": dict(param="num_latent", values=(4, 10, 16), alphas=(0.0, 0.6)),
}
METRICS = ("mse", "prediction_error", "tp", "fp", "fn", "f1", "selected")


def _cell_data(case: str, value, n: int, seed: int) -> SimDataset:
    if case == "C1":
        return simulate_anova(4, 0.0, value, n, seed)
    if case == "C2":
        return simulate_anova(4, value, 2.0, n, seed)
    return simulate_anova(int(value), 0.0, 2.0, n, seed)


def fit_cv(dataset: SimDataset, alpha: float, folds: int = 5, nlambda: int = 100,
           seed: int = 0, opts: PdhgOptions | None = None) -> tuple[np.ndarray, int]:
    """Choose lambda by cross-validation, then refit on the full data.

    Returns the coefficients and the number of non-converged solves.
    """
    d, y = dataset.design, dataset.y
    cfg = GmcConfig(alpha)
    grid = make_grid(d, y, nlambda)
    cv = cross_validate(d, y, folds, grid, cfg, seed=seed, opts=opts)
    path = solution_path(d, y, LambdaGrid(grid.values[: cv.selected_index + 1]), cfg, opts)
    return path.coefs[:, -1], cv.failures + int(np.sum(~path.converged))


def _replicate(args):
    case, value, alphas, n, folds, nlambda, rep_seed, opts = args
    data = _cell_data(case, value, n, rep_seed)
    out = []
    for alpha in alphas:
        try:
            beta, nonconv = fit_cv(data, alpha, folds, nlambda, rep_seed, opts)
            out.append((compute_metrics(beta, data), nonconv))
        except (ConvergenceError, DivergenceError, ValueError):
            out.append((None, 0))
    return out


@dataclass
class CellSummary:
    case: str
    param: str
    value: float
    p: int
    alpha: float
    mean: dict
    stderr: dict
    replicates: int
    failures: int
    nonconverged: int


def run_case(case: str, replicates: int, alphas=None, seed: int = 0, values=None, n: int = 100,
             folds: int = 5, nlambda: int = 100, opts: PdhgOptions | None = None,
             threads: int = 1) -> list[CellSummary]:
    """Run one simulation case; one summary per (parameter value, alpha) cell.

    Replicate ``r`` uses seed ``seed ^ r`` for both data and folds.  Within a
    replicate every cell shares the same underlying draws, so comparisons
    across alphas and across the case parameter are paired.
    """
    if case not in CASES:
        raise ValueError(f"unknown case '{case}' (expected one of {', '.join(CASES)})")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    spec = CASES[case]
    alphas = tuple(spec["alphas"] if alphas is None else alphas)
    values = tuple(spec["values"] if values is None else values)
    jobs = [(case, v, alphas, n, folds, nlambda, seed ^ r, opts) for v in values for r in range(replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = [_replicate(j) for j in jobs]

    summaries = []
    for vi, v in enumerate(values):
        block = results[vi * replicates:(vi + 1) * replicates]
        p = _cell_data(case, v, n, seed).design.p
        for ai, alpha in enumerate(alphas):
            ok = [b[ai][0] for b in block if b[ai][0] is not None]
            nonconv = sum(b[ai][1] for b in block)
            mean, se = {}, {}
            for m in METRICS:
                vals = np.array([getattr(x, m) for x in ok], dtype=np.float64)
                mean[m] = float(vals.mean()) if vals.size else math.nan
                se[m] = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
            summaries.append(CellSummary(case, spec["param"], v, p, alpha, mean, se, len(ok),
                                         replicates - len(ok), nonconv))
    return summaries


def write_results_csv(summaries: list[CellSummary], out) -> None:
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "param", "value", "p", "alpha", "metric", "mean", "stderr",
                    "replicates", "failures", "nonconverged"])
        for s in summaries:
            for m in METRICS:
                w.writerow([s.case, s.param, fmt(s.value), s.p, fmt(s.alpha), m, fmt(s.mean[m]),
                            fmt(s.stderr[m]), s.replicates, s.failures, s.nonconverged])


# ---------------------------------------------------------------------------
# theory quantities


@dataclass
class TheoryDiagnostics:
    v_star: np.ndarray
    nu: np.ndarray
    nu_max: float  # max over the true support; nan when it is empty
    nu_min: float  # min over its complement; nan when it is empty
    support: np.ndarray
    a3_holds: bool


DIAGNOSTIC_FBS = FbsOptions(max_iter=20000, tol=1e-12)


def theory_diagnostics(design: GroupedDesign, beta_star, cfg: GmcConfig) -> TheoryDiagnostics:
    """Minimizer ``v*`` of the generalized Huber problem at the true coefficients and the ``nu_j``.

    ``nu_j = K_j +/- ||[B^T B]_j (beta* - v*)|| / n`` with the plus sign on the
    true support.  The sample-size assumption requires every off-support
    ``nu_k`` to be positive.
    """
    beta_star = np.asarray(beta_star, dtype=np.float64)
    metric = cfg.penalty_metric(design)
    if metric is None:
        raise ValueError("B is unbounded for the default choice at lam = 0; pass lam > 0 or btb")
    v_star, _ = huber_minimizer(beta_star, design, metric, DIAGNOSTIC_FBS)
    pull = design.block_norms(metric @ (beta_star - v_star))
    support = design.block_norms(beta_star) > 0
    nu = np.where(support, design.weights + pull, design.weights - pull)
    nu_max = float(nu[support].max()) if support.any() else math.nan
    nu_min = float(nu[~support].min()) if (~support).any() else math.nan
    a3 = bool(np.all(nu[~support] > 0))
    return TheoryDiagnostics(v_star, nu, nu_max, nu_min, np.flatnonzero(support), a3)


def isotropic_config(design: GroupedDesign, lam: float) -> tuple[GmcConfig, float]:
    """``B^T B = (eta / lam) I`` with ``eta`` the smallest eigenvalue of ``X^T X``."""
    eta = float(np.linalg.eigvalsh(design.X.T @ design.X)[0])
    if eta <= 0:
        raise ValueError("X^T X is singular; the isotropic choice needs n > p and full rank")
    return GmcConfig(lam=lam, btb=(eta / lam) * np.eye(design.p)), eta


def isotropic_closed_form(design: GroupedDesign, beta_star, eta: float, lam: float):
    """Closed-form ``v*`` and ``nu_j`` for ``B^T B = (eta / lam) I``.

    ``v*_j`` is the block soft-threshold of ``beta*_j`` at level
    ``n K_j lam / eta``; blocks above that level get ``nu_j = 2 K_j``, the rest
    ``nu_j = K_j + eta ||beta*_j|| / (n lam)``.
    """
    beta_star = np.asarray(beta_star, dtype=np.float64)
    level = design.n * design.weights * lam / eta
    norms = design.block_norms(beta_star)
    v = np.zeros_like(beta_star)
    for j, sl in enumerate(design.blocks()):
        if norms[j] > level[j]:
            v[sl] = (1.0 - level[j] / norms[j]) * beta_star[sl]
    big = norms > level
    nu = design.weights + np.where(big, design.weights, eta * norms / (design.n * lam))
    return v, nu
