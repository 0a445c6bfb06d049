# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 惩罚回归求解器测试
"""

import itertools

import numpy as np
import pytest

from models import RegressionProblem
from services.penalized_regression import (assign_folds, cross_validate_lambda, kkt_violation, lambda_max,
                                           lambda_path, lasso_objective, weighted_lasso,
                                           weighted_lasso_cv_multi, weighted_least_squares,
                                           weighted_least_squares_multi)
from utils.errors import DataError, IdentificationError


def random_problem(m=40, q=4, seed=0, weights='gaussian', noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, q))
    beta = rng.normal(size=q)
    y = 0.5 + X @ beta + noise * rng.normal(size=m)
    if weights == 'gaussian':
        times = np.linspace(0, 1, m)
        w = np.exp(-np.square(times - 0.4) / (2 * 0.3 ** 2))
    else:
        w = np.ones(m)
    return RegressionProblem(X=X, y=y, w=w)


def exact_lasso(problem, lam):
    """枚举活跃集与符号的精确解（仅用于小问题）"""
    sw = problem.w.sum()
    x_bar = problem.w @ problem.X / sw
    y_bar = problem.w @ problem.y / sw
    Xc = problem.X - x_bar
    yc = problem.y - y_bar
    G = (Xc * (problem.w / problem.m)[:, None]).T @ Xc
    c = (Xc * (problem.w / problem.m)[:, None]).T @ yc
    q = problem.q
    best, best_value = None, np.inf
    for size in range(q + 1):
        for active in itertools.combinations(range(q), size):
            for signs in itertools.product([-1.0, 1.0], repeat=size):
                beta = np.zeros(q)
                if size:
                    idx = list(active)
                    sol = np.linalg.solve(G[np.ix_(idx, idx)], c[idx] - lam / 2 * np.array(signs))
                    if not np.all(np.sign(sol) == np.array(signs)):
                        continue
                    beta[idx] = sol
                value = lasso_objective(problem, float(y_bar - x_bar @ beta), beta, lam)
                if value < best_value:
                    best, best_value = beta, value
    return best


def test_wls_exact_line():
    """y = 2x 精确拟合：截距0，斜率2"""
    problem = RegressionProblem(X=[[1.0], [2.0], [3.0]], y=[2.0, 4.0, 6.0], w=[1.0, 1.0, 1.0])
    solution = weighted_least_squares(problem)
    assert solution.intercept == pytest.approx(0.0, abs=1e-12)
    assert solution.slopes[0] == pytest.approx(2.0)
    assert solution.objective == pytest.approx(0.0, abs=1e-20)


def test_wls_uniform_weights_equals_ols():
    """均匀权重（任意常数倍）与普通最小二乘一致"""
    problem = random_problem(weights='uniform')
    scaled = RegressionProblem(X=problem.X, y=problem.y, w=0.3 * problem.w)
    design = np.column_stack([np.ones(problem.m), problem.X])
    ols, *_ = np.linalg.lstsq(design, problem.y, rcond=None)
    for p in (problem, scaled):
        solution = weighted_least_squares(p)
        assert solution.intercept == pytest.approx(ols[0], abs=1e-10)
        assert np.allclose(solution.slopes, ols[1:], atol=1e-10)


def test_wls_matches_normal_equations_oracle():
    """30×3 问题、高斯权重：与加权正规方程（lstsq求解）一致，梯度接近0"""
    problem = random_problem(m=30, q=3, seed=11)
    root = np.sqrt(problem.w)
    design = np.column_stack([np.ones(problem.m), problem.X])
    oracle, *_ = np.linalg.lstsq(design * root[:, None], problem.y * root, rcond=None)
    solution = weighted_least_squares(problem)
    assert solution.intercept == pytest.approx(oracle[0], abs=1e-8)
    assert np.allclose(solution.slopes, oracle[1:], atol=1e-8)

    residual = problem.y - solution.intercept - problem.X @ solution.slopes
    gradient = -2.0 * design.T @ (problem.w * residual)
    assert np.max(np.abs(gradient)) <= 1e-8
    assert solution.objective == pytest.approx(float(np.sum(problem.w * residual ** 2)), abs=1e-8)


def test_wls_singular_system():
    """重复列导致病态系统时报可识别性错误"""
    rng = np.random.default_rng(1)
    x = rng.normal(size=20)
    problem = RegressionProblem(X=np.column_stack([x, x]), y=rng.normal(size=20), w=np.ones(20))
    with pytest.raises(IdentificationError):
        weighted_least_squares(problem)


def test_wls_multi_matches_single():
    """多响应求解与逐个响应求解一致"""
    rng = np.random.default_rng(5)
    X = rng.normal(size=(25, 3))
    Y = rng.normal(size=(25, 2))
    w = rng.uniform(0.2, 1.0, size=25)
    intercepts, slopes = weighted_least_squares_multi(X, Y, w)
    for b in range(2):
        single = weighted_least_squares(RegressionProblem(X=X, y=Y[:, b], w=w))
        assert intercepts[b] == pytest.approx(single.intercept)
        assert np.allclose(slopes[:, b], single.slopes)


def test_lasso_zero_penalty_equals_wls():
    problem = random_problem(seed=2)
    lasso = weighted_lasso(problem, 0.0)
    wls = weighted_least_squares(problem)
    assert lasso.intercept == pytest.approx(wls.intercept, abs=1e-6)
    assert np.allclose(lasso.slopes, wls.slopes, atol=1e-6)


def test_lasso_orthonormal_soft_threshold():
    """正交中心化设计、单位权重：斜率等于OLS斜率的软阈值"""
    rng = np.random.default_rng(4)
    m = 30
    raw = rng.normal(size=(m, 3))
    Q, _ = np.linalg.qr(raw - raw.mean(axis=0))
    X = Q * np.sqrt(m)
    y = X @ np.array([1.5, -0.2, 0.6]) + 0.3 * rng.normal(size=m)
    problem = RegressionProblem(X=X, y=y, w=np.ones(m))
    lam = 0.8
    solution = weighted_lasso(problem, lam)

    ols = X.T @ (y - y.mean()) / np.sum(X ** 2, axis=0)
    threshold = lam * m / (2.0 * np.sum(X ** 2, axis=0))
    expected = np.sign(ols) * np.maximum(np.abs(ols) - threshold, 0.0)
    assert np.allclose(solution.slopes, expected, atol=1e-6)
    assert solution.slopes[1] == 0.0


def test_lasso_above_lambda_max_all_zero():
    problem = random_problem(seed=3)
    top = lambda_max(problem)
    for lam in (top, 2 * top):
        solution = weighted_lasso(problem, lam)
        assert np.all(solution.slopes == 0.0)
        assert solution.intercept == pytest.approx(problem.w @ problem.y / problem.w.sum())
    assert np.any(weighted_lasso(problem, 0.9 * top).slopes != 0.0)


def test_lasso_kkt_and_objective():
    """多个λ下KKT条件成立，目标函数值与定义一致"""
    problem = random_problem(m=50, q=6, seed=8)
    for lam in lambda_path(problem, n_lambda=8):
        solution = weighted_lasso(problem, lam)
        assert kkt_violation(problem, solution) <= 1e-6
        assert solution.objective == pytest.approx(
            lasso_objective(problem, solution.intercept, solution.slopes, lam), abs=1e-8)


def test_lasso_objective_monotone_across_sweeps():
    problem = random_problem(m=60, q=8, seed=9)
    problem.X[:, 1] = problem.X[:, 0] + 0.1 * problem.X[:, 1]
    trace = []
    weighted_lasso(problem, 0.01 * lambda_max(problem), trace=trace)
    assert len(trace) >= 2
    assert np.all(np.diff(trace) <= 1e-12 * (1 + np.abs(trace[0])))


def test_lasso_matches_exact_oracle():
    """200个随机小问题（m ≤ 12, q ≤ 3）：与活跃集枚举的精确解逐系数相差不超过1e-4"""
    rng = np.random.default_rng(2024)
    for seed in range(200):
        m = int(rng.integers(6, 13))
        q = int(rng.integers(1, 4))
        problem = random_problem(m=m, q=q, seed=100 + seed)
        lam = float(rng.uniform(0.02, 0.95)) * lambda_max(problem)
        solution = weighted_lasso(problem, lam)
        assert np.allclose(solution.slopes, exact_lasso(problem, lam), rtol=0, atol=1e-4)


def test_lasso_kkt_on_random_pairs():
    """1000个随机 (问题, λ) 组合：返回的解都满足KKT条件"""
    rng = np.random.default_rng(7)
    for trial in range(1000):
        m = int(rng.integers(6, 41))
        q = int(rng.integers(1, 7))
        problem = random_problem(m=m, q=q, seed=5000 + trial,
                                 weights='gaussian' if trial % 2 else 'uniform')
        lam = float(rng.uniform(0.0, 1.2)) * lambda_max(problem)
        assert kkt_violation(problem, weighted_lasso(problem, lam)) <= 1e-5


def test_lambda_path_shape():
    problem = random_problem(seed=12)
    path = lambda_path(problem)
    assert len(path) == 50
    assert path[0] == pytest.approx(lambda_max(problem))
    assert np.all(np.diff(path) < 0)
    ratios = path[1:] / path[:-1]
    assert np.allclose(ratios, ratios[0], rtol=0, atol=1e-12)
    assert path[-1] == pytest.approx(path[0] * 1e-4)


def test_lambda_path_endpoints():
    """路径起点斜率全为0，终点接近WLS"""
    problem = random_problem(m=80, q=3, seed=13, noise=0.5)
    path = lambda_path(problem)
    assert np.all(weighted_lasso(problem, path[0]).slopes == 0.0)
    assert np.allclose(weighted_lasso(problem, path[-1]).slopes, weighted_least_squares(problem).slopes, atol=1e-3)


def test_lambda_path_degenerate_response():
    problem = RegressionProblem(X=np.random.default_rng(0).normal(size=(10, 2)), y=np.zeros(10), w=np.ones(10))
    with pytest.raises(DataError):
        lambda_path(problem)


def test_assign_folds():
    folds = assign_folds(23, 10, seed=1)
    assert np.array_equal(folds, assign_folds(23, 10, seed=1))
    counts = np.bincount(folds, minlength=10)
    assert counts.min() >= 2 and counts.max() <= 3
    with pytest.raises(DataError):
        assign_folds(5, 10, seed=1)


def test_cv_rejects_zero_weight_fold():
    rng = np.random.default_rng(0)
    w = np.zeros(30)
    w[0] = 1.0
    problem = RegressionProblem(X=rng.normal(size=(30, 2)), y=rng.normal(size=30), w=w)
    with pytest.raises(DataError):
        cross_validate_lambda(problem, folds=10, seed=1)


def test_cv_noise_prefers_heavy_shrinkage():
    """纯噪声响应：所选λ位于路径的上半段（至少18/20次）"""
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        problem = RegressionProblem(X=rng.normal(size=(100, 10)), y=rng.normal(size=100), w=np.ones(100))
        result = cross_validate_lambda(problem, seed=seed)
        hits += result.index < len(result.lambdas) // 2
    assert hits >= 18


def test_cv_keeps_strong_signal():
    """强单变量信号（R²≈0.9）：选择的模型保留该斜率（至少19/20次）"""
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        X = rng.normal(size=(80, 5))
        y = 3.0 * X[:, 0] + rng.normal(size=80)
        intercepts, slopes, lambda_hat = weighted_lasso_cv_multi(X, y[:, None], np.ones(80), seed=seed)
        hits += slopes[0, 0] != 0.0
    assert hits >= 19


def test_cv_deterministic():
    problem = random_problem(m=60, q=5, seed=21)
    first = cross_validate_lambda(problem, seed=7)
    second = cross_validate_lambda(problem, seed=7)
    assert first.lambda_hat == second.lambda_hat
    assert np.array_equal(first.cv_errors, second.cv_errors)
    assert first.lambda_hat == first.lambdas[first.index]
