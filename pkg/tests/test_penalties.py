import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grgmc.design import GroupedDesign
from grgmc.penalties import (
    GmcConfig, McpRef, group_gen_huber, group_gmc_penalty, huber, huber_minimizer, mcp_value,
    objective_value, scaled_huber, scaled_mc,
)
from grgmc.prox import group_norm_sum
from grgmc.simulate import isotropic_closed_form

from oracles import grid_huber2, mcp_closed_form, random_problem, scaled_mc_closed_form


@pytest.mark.parametrize("beta, expected", [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5), (-2.0, 1.5)])
def test_huber(beta, expected):
    assert huber(beta) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("beta, b, expected", [(0.5, 1.0, 0.125), (2.0, 1.0, 1.5), (7.3, 0.0, 0.0)])
def test_scaled_huber(beta, b, expected):
    assert scaled_huber(beta, b) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("beta, b, expected", [(2.0, 1.0, 0.5), (-1.7, 0.0, 1.7), (0.5, 1.0, 0.375)])
def test_scaled_mc(beta, b, expected):
    assert scaled_mc(beta, b) == pytest.approx(expected, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(-100, 100), st.floats(0.01, 10))
def test_scaled_mc_bounds_and_saturation(beta, b):
    v = scaled_mc(beta, b)
    assert -1e-12 <= v <= abs(beta) + 1e-12
    if abs(beta) >= 1 / b**2:
        assert v == pytest.approx(1 / (2 * b * b), rel=1e-12)


def test_mcp_examples():
    assert mcp_value(2.0, McpRef(1.0, 2.0)) == pytest.approx(1.0)
    assert mcp_value(0.0, McpRef(0.3, 3.0)) == 0.0
    with pytest.raises(ValueError):
        McpRef(1.0, 1.0)


def test_mcp_equals_lambda_times_scaled_mc():
    lam, gamma = 1.0, 2.0
    b = math.sqrt(1 / (gamma * lam))
    assert lam * scaled_mc(0.7, b) == pytest.approx(mcp_value(0.7, McpRef(lam, gamma)), abs=1e-12)
    grid = np.linspace(-5, 5, 1001)
    assert np.allclose(lam * scaled_mc(grid, b), mcp_value(grid, McpRef(lam, gamma)), atol=1e-12)


@pytest.fixture
def problem():
    rng = np.random.default_rng(11)
    sizes = [2, 3, 1, 2]
    X, y, beta = random_problem(rng, 30, sizes)
    return GroupedDesign(X, sizes), y, beta, rng


def test_gen_huber_zero_cases(problem):
    d, y, beta, _ = problem
    assert group_gen_huber(beta, d, GmcConfig(0.0, 0.5)) == 0.0
    assert group_gen_huber(np.zeros(d.p), d, GmcConfig(0.7, 0.5)) == 0.0
    lasso = group_norm_sum(beta, d.weights, d.starts)
    assert group_gmc_penalty(beta, d, GmcConfig(0.0, 0.5)) == pytest.approx(lasso, rel=1e-15)


def test_gen_huber_isotropic_closed_form(problem):
    d, _, _, rng = problem
    lam = 0.05
    eta = float(np.linalg.eigvalsh(d.X.T @ d.X)[0])
    cfg = GmcConfig(lam=lam, btb=(eta / lam) * np.eye(d.p))
    for _ in range(5):
        beta = rng.uniform(-2, 2, d.p) * rng.integers(0, 2, d.p)
        v, _ = isotropic_closed_form(d, beta, eta, lam)
        diff = beta - v
        expected = group_norm_sum(v, d.weights, d.starts) + 0.5 * (eta / lam) / d.n * float(diff @ diff)
        assert group_gen_huber(beta, d, cfg) == pytest.approx(expected, abs=1e-6)


def test_one_dimensional_gmc_is_scaled_mc():
    n = 7
    d = GroupedDesign(np.random.default_rng(0).standard_normal((n, 1)), [1], np.array([1.0]))
    for b in (0.3, 1.0, 2.5):
        cfg = GmcConfig(lam=0.4, btb=np.array([[n * b * b]]))
        for beta in np.linspace(-3, 3, 61):
            got = group_gmc_penalty(np.array([beta]), d, cfg)
            assert got == pytest.approx(scaled_mc_closed_form(beta, b), abs=1e-8)


def test_diagonal_btb_gives_group_mcp_per_coordinate():
    n, lam, gamma = 10, 0.6, 3.0
    d = GroupedDesign(np.random.default_rng(1).standard_normal((n, 3)), [1, 1, 1], np.ones(3))
    cfg = GmcConfig(lam=lam, btb=(n / (gamma * lam)) * np.eye(3))
    rng = np.random.default_rng(2)
    for _ in range(20):
        beta = rng.uniform(-3, 3, 3)
        expected = sum(mcp_closed_form(b, lam, gamma) for b in beta)
        assert lam * group_gmc_penalty(beta, d, cfg) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_two_dimensional_penalty_matches_grid(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((8, 2))
    d = GroupedDesign(X, [2])
    alpha, lam = 0.8, 0.3
    beta = rng.uniform(-2, 2, 2)
    M = alpha * (X.T @ X / 8) / lam
    expected = math.sqrt(2) * np.linalg.norm(beta) - grid_huber2(beta, M, math.sqrt(2))
    assert group_gmc_penalty(beta, d, GmcConfig(alpha, lam)) == pytest.approx(expected, abs=1e-3)


def test_objective_examples(problem):
    d, y, beta, _ = problem
    cfg = GmcConfig(0.5, 0.2)
    assert objective_value(np.zeros(d.p), d, y, cfg) == pytest.approx(0.5 * y @ y / d.n)
    r = y - d.X @ beta
    assert objective_value(beta, d, y, cfg.with_lam(0.0)) == pytest.approx(0.5 * r @ r / d.n)


def test_midpoint_convexity_spot_check(problem):
    d, y, _, rng = problem
    for alpha in (0.5, 1.0):
        cfg = GmcConfig(alpha, 0.3)
        for _ in range(30):
            b1, b2 = rng.uniform(-3, 3, (2, d.p))
            F = lambda b: objective_value(b, d, y, cfg)
            assert F(0.5 * (b1 + b2)) <= 0.5 * (F(b1) + F(b2)) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_penalty_bounds_and_monotone_in_alpha(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((12, 5))
    d = GroupedDesign(X, [2, 3])
    beta = rng.uniform(-3, 3, 5)
    lasso = group_norm_sum(beta, d.weights, d.starts)
    vals = [group_gmc_penalty(beta, d, GmcConfig(a, 0.4)) for a in (0, 0.25, 0.5, 0.75, 1.0)]
    assert all(0 <= v <= lasso for v in vals)
    assert all(a >= b - 1e-9 for a, b in zip(vals, vals[1:]))


def test_default_b_at_zero_lambda_gives_group_lasso(problem):
    d, _, beta, _ = problem
    # B is unbounded: the quadratic pins v = beta
    cfg = GmcConfig(0.5, 0.0)
    assert cfg.penalty_metric(d) is None
    assert group_gmc_penalty(beta, d, cfg) == 0.0


def test_operator_and_explicit_gram_agree(problem):
    d, _, beta, _ = problem
    a = group_gmc_penalty(beta, d, GmcConfig(0.7, 0.3, gram_mode="explicit"))
    b = group_gmc_penalty(beta, d, GmcConfig(0.7, 0.3, gram_mode="operator"))
    assert a == pytest.approx(b, abs=1e-8)


def test_huber_minimizer_optimality(problem):
    d, _, beta, _ = problem
    metric = GmcConfig(0.9, 0.2).penalty_metric(d)
    v, _ = huber_minimizer(beta, d, metric)
    g = metric @ (v - beta)
    for j, sl in enumerate(d.blocks()):
        nv = np.linalg.norm(v[sl])
        if nv > 0:
            assert np.allclose(-g[sl], d.weights[j] * v[sl] / nv, atol=1e-7)
        else:
            assert np.linalg.norm(g[sl]) <= d.weights[j] + 1e-7


@pytest.mark.parametrize("kwargs", [dict(alpha=1.5), dict(alpha=-0.1), dict(lam=-1.0), dict(gram_mode="x"),
                                    dict(btb=np.array([[1.0, 2.0], [0.0, 1.0]])), dict(btb=np.ones(3))])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        GmcConfig(**kwargs)
