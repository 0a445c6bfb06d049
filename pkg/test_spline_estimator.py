# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 样条估计器测试
薄板回归样条基、GCV平滑参数选择、有效自由度、可信带与GAM-st阈值化
"""

import dataclasses

import numpy as np
import pytest
from scipy.stats import norm

from models import EstimationSpec, LaggedDesign, ParameterFunctionSpec, METHOD_GAM, METHOD_GAM_ST
from services.dataset import build_lagged_design, standardize, subset_design
from services import spline_estimator
from services.simulation import render_coefficient_array, simulate_tv_var
from services.spline_estimator import (credible_bands, fit_gam_equation, fit_tv_var_gam, gcv_score, select_k,
                                       tprs_basis)
from utils.errors import DataError, IdentificationError, NumericalError


def simulated_design(kinds, n, seed, theta=0.3):
    specs = np.array([[ParameterFunctionSpec(kind, theta=theta) for kind in row] for row in kinds], dtype=object)
    truth = render_coefficient_array(specs, n, seed=seed)
    return standardize(build_lagged_design(simulate_tv_var(truth, seed=seed), [1])), truth


DIAGONAL = [['constant_nonzero', 'zero', 'zero'],
            ['zero', 'constant_nonzero', 'zero'],
            ['zero', 'zero', 'constant_nonzero']]
WHITE_NOISE = [['zero'] * 3 for _ in range(3)]


def test_select_k():
    assert select_k(36, 10) == 3
    assert select_k(1808, 10) == 10
    assert select_k(1808, 10, k_max=20) == 20
    with pytest.raises(IdentificationError):
        select_k(30, 10)
    with pytest.raises(IdentificationError):
        select_k(20, 10)


def test_basis_structure():
    """S 对称半正定，{1, t} 方向位于惩罚零空间，evaluate 复现 B"""
    times = np.sort(np.random.default_rng(0).uniform(0, 1, 150))
    basis = tprs_basis(times, 8)
    assert basis.B.shape == (150, 8)
    assert np.allclose(basis.S, basis.S.T, atol=1e-10)
    assert np.linalg.eigvalsh(basis.S).min() >= -1e-10
    assert basis.nullspace_dim == 2
    for direction in np.eye(8)[:2]:
        assert np.linalg.norm(basis.S @ direction) <= 1e-8
    assert np.allclose(basis.B[:, 0], 1.0)
    assert np.allclose(basis.B[:, 1], times)
    assert np.allclose(basis.evaluate(times), basis.B)


def test_penalty_increases_with_wiggliness():
    """k=5、200个等距时点：惩罚特征值严格递增"""
    basis = tprs_basis(np.linspace(0, 1, 200), 5)
    eigenvalues = basis.penalty_eigenvalues
    assert len(eigenvalues) == 3
    assert eigenvalues[0] > 0
    assert np.all(np.diff(eigenvalues) > 0)


def test_basis_reproduces_linear():
    """无惩罚最小二乘精确复现 y = 3t − 1"""
    times = np.linspace(0, 1, 120)
    basis = tprs_basis(times, 10)
    coefficients, *_ = np.linalg.lstsq(basis.B, 3 * times - 1, rcond=None)
    assert np.max(np.abs(basis.B @ coefficients - (3 * times - 1))) <= 1e-6


def test_basis_knot_subsampling():
    times = np.linspace(0, 1, 300)
    basis = tprs_basis(times, 6, max_knots=50)
    assert len(basis.knots) == 50
    assert basis.B.shape == (300, 6)
    again = tprs_basis(times, 6, max_knots=50)
    assert np.array_equal(basis.knots, again.knots)


def test_basis_errors():
    times = np.linspace(0, 1, 10)
    with pytest.raises(DataError):
        tprs_basis(times, 10)
    with pytest.raises(DataError):
        tprs_basis(times, 2)
    with pytest.raises(DataError):
        tprs_basis(np.full(20, 0.3), 4)


def test_stationary_truth_gives_flat_smooths():
    """平稳VAR、n=1000、p=3：多数滞后效应轨迹近乎平坦（跨时间标准差 ≤ 0.1，edf ≤ 2.5）"""
    passed, total = 0, 0
    for seed in range(10):
        design, _ = simulated_design(DIAGONAL, 1000, seed)
        basis = tprs_basis(design.response_times, select_k(design.included_rows, design.q))
        eval_times = np.linspace(0, 1, 20)
        for i in range(3):
            fit = fit_gam_equation(design, i, basis)
            trajectories = fit.trajectories(eval_times)[1:]
            for s in range(3):
                passed += trajectories[s].std() <= 0.1 and fit.edf[s + 1] <= 2.5
                total += 1
    assert passed / total >= 0.7


def test_linear_increase_recovered():
    """线性递增的滞后效应（0 → 0.35），n=1808：估计轨迹的平均绝对误差 ≤ 0.05（多数种子）"""
    kinds = [['zero', 'linear_up', 'zero'], ['zero'] * 3, ['zero'] * 3]
    hits = 0
    for seed in range(5):
        design, truth = simulated_design(kinds, 1808, seed, theta=0.35)
        est_points = np.linspace(0, 1, 20)
        model = fit_tv_var_gam(design, est_points).unscaled()
        error = np.abs(model.coeffs[0, 1, 0] - truth.evaluate_at(est_points)[0, 1]).mean()
        hits += error <= 0.05
    assert hits >= 3


def test_infinite_smoothing_is_affine():
    """λ → 10¹² 时每条轨迹在时间上是仿射函数"""
    design, _ = simulated_design(DIAGONAL, 400, seed=3)
    basis = tprs_basis(design.response_times, 8)
    fit = fit_gam_equation(design, 0, basis, lambdas=np.full(design.q + 1, 1e12))
    grid = np.linspace(0, 1, 50)
    affine = np.column_stack([np.ones_like(grid), grid])
    for trajectory in fit.trajectories(grid):
        coefficients, *_ = np.linalg.lstsq(affine, trajectory, rcond=None)
        assert np.max(np.abs(affine @ coefficients - trajectory)) <= 1e-4
    assert np.allclose(fit.edf, 2.0, atol=0.05)


def test_edf_limits_and_monotonicity():
    """λ=0 时每个平滑的edf等于k；edf_total随单个λ严格递减"""
    design, _ = simulated_design(DIAGONAL, 300, seed=4)
    basis = tprs_basis(design.response_times, 6)
    n_smooth = design.q + 1
    free = fit_gam_equation(design, 1, basis, lambdas=np.zeros(n_smooth))
    assert np.allclose(free.edf, 6.0, atol=1e-6)
    assert 'edf_near_k' in free.warnings

    totals = []
    for value in (0.01, 1.0, 100.0):
        lambdas = np.ones(n_smooth)
        lambdas[2] = value
        totals.append(fit_gam_equation(design, 1, basis, lambdas=lambdas).edf_total)
    assert totals[0] > totals[1] > totals[2]


def test_gcv_saturated_fit_is_near_zero():
    """无噪声、可被基精确表示的响应：RSS与GCV趋于0；edf_total ≥ m 时报错"""
    rng = np.random.default_rng(5)
    m = 120
    times = np.linspace(0, 1, m)
    x = rng.normal(size=(m, 1))
    y = 1.0 + 2.0 * times + (0.5 - times) * x[:, 0]
    design = LaggedDesign(predictors=x, responses=y[:, None], response_times=times, included_rows=m,
                          total_rows=m, lags=[1], labels=['y'], row_index=np.arange(m))
    basis = tprs_basis(times, 5)
    fit = fit_gam_equation(design, 0, basis, lambdas=np.full(2, 1e-8))
    assert fit.rss <= 1e-12
    assert gcv_score(fit) <= 1e-12

    with pytest.raises(NumericalError):
        gcv_score(dataclasses.replace(fit, edf=np.full(2, m / 2.0)))


def test_gcv_prefers_heavy_smoothing_on_noise():
    """纯噪声数据：较大的λ有更低的GCV（至少9/10个种子）"""
    wins = 0
    for seed in range(10):
        design, _ = simulated_design(WHITE_NOISE, 300, seed)
        basis = tprs_basis(design.response_times, 10)
        n_smooth = design.q + 1
        small = fit_gam_equation(design, 0, basis, lambdas=np.full(n_smooth, 1e-3))
        large = fit_gam_equation(design, 0, basis, lambdas=np.full(n_smooth, 1e3))
        wins += large.gcv < small.gcv
    assert wins >= 9


def test_gcv_optimizer_beats_grid():
    """优化得到的GCV不高于100点公共λ网格上的最小值"""
    design, _ = simulated_design(DIAGONAL, 300, seed=6)
    basis = tprs_basis(design.response_times, 8)
    n_smooth = design.q + 1
    fit = fit_gam_equation(design, 2, basis)
    grid = [fit_gam_equation(design, 2, basis, lambdas=np.full(n_smooth, np.exp(rho))).gcv
            for rho in np.linspace(-8, 12, 100)]
    assert fit.gcv <= min(grid) * (1 + 1e-9)
    assert fit.gcv == pytest.approx(gcv_score(fit))


def test_gam_fit_is_reproducible():
    design, _ = simulated_design(DIAGONAL, 250, seed=7)
    basis = tprs_basis(design.response_times, 6)
    first = fit_gam_equation(design, 0, basis)
    second = fit_gam_equation(design, 0, basis)
    assert np.array_equal(first.theta, second.theta)
    assert np.array_equal(first.lambdas, second.lambdas)


def test_gam_identification():
    design, _ = simulated_design(DIAGONAL, 200, seed=8)
    small = subset_design(design, np.arange(40))
    basis = tprs_basis(small.response_times, 10)
    with pytest.raises(IdentificationError):
        fit_gam_equation(small, 0, basis)
    with pytest.raises(DataError):
        fit_gam_equation(design, 0, tprs_basis(design.response_times, 5), lambdas=[1.0, 1.0])


def test_credible_bands_levels():
    """z(0.95) = 1.959964；带宽随水平单调变宽"""
    assert round(float(norm.ppf(0.975)), 6) == 1.959964
    design, _ = simulated_design(DIAGONAL, 300, seed=9)
    fit = fit_gam_equation(design, 0, tprs_basis(design.response_times, 6))
    times = np.linspace(0, 1, 20)
    widths = [credible_bands(fit, times, level) for level in (0.8, 0.95, 0.99)]
    for narrow, wide in zip(widths[:-1], widths[1:]):
        assert np.all(wide.upper - wide.lower > narrow.upper - narrow.lower)
    half_95 = (widths[1].upper - widths[1].point)
    half_80 = (widths[0].upper - widths[0].point)
    assert np.allclose(half_95 / half_80, norm.ppf(0.975) / norm.ppf(0.9))
    assert np.allclose(widths[1].point, fit.trajectories(times))
    with pytest.raises(DataError):
        credible_bands(fit, times, 1.0)


def test_zero_coefficients_covered_and_thresholded():
    """恒为0的系数：95%可信带在至少85%的估计点覆盖0，GAM-st在这些点上恰好为0"""
    off_diagonal = ~np.eye(3, dtype=bool)
    covered, zeroed = [], []
    for seed in range(10):
        design, _ = simulated_design(DIAGONAL, 1000, seed)
        model = fit_tv_var_gam(design, np.linspace(0, 1, 20), threshold=True)
        lower = model.diagnostics['band_lower'][:, :, 0, :]
        upper = model.diagnostics['band_upper'][:, :, 0, :]
        covered.append(((lower <= 0) & (upper >= 0))[off_diagonal].mean())
        zeroed.append((model.coeffs[:, :, 0, :] == 0.0)[off_diagonal].mean())
    assert np.mean(covered) >= 0.85
    assert np.mean(zeroed) >= 0.85


def test_gam_and_thresholded_agree():
    """GAM-st 非零处与 GAM 完全一致；GAM 不产生精确的0"""
    design, _ = simulated_design(DIAGONAL, 500, seed=11)
    est_points = EstimationSpec(method='gam').resolved_est_points()
    assert np.allclose(np.diff(est_points), 1 / 19)
    gam = fit_tv_var_gam(design, est_points)
    thresholded = fit_tv_var_gam(design, est_points, threshold=True)
    assert gam.method == METHOD_GAM and thresholded.method == METHOD_GAM_ST
    assert not np.any(gam.coeffs == 0.0)
    nonzero = thresholded.coeffs != 0.0
    assert np.array_equal(thresholded.coeffs[nonzero], gam.coeffs[nonzero])
    assert np.array_equal(thresholded.intercepts, gam.intercepts)

    diagnostics = gam.diagnostics
    assert diagnostics['k'] == select_k(design.included_rows, design.q)
    assert diagnostics['edf'].shape == (3, 4)
    assert diagnostics['band_lower'].shape == gam.coeffs.shape
    assert diagnostics['intercept_bands'].shape == (3, 2, 20)


def test_equation_failure_keeps_cause(monkeypatch):
    """单个方程失败时报错注明方程，并保留原始异常作为原因"""
    design, _ = simulated_design(DIAGONAL, 120, seed=3)

    def failing(design, eq_index, basis, lambdas=None):
        raise NumericalError("GCV无定义")

    monkeypatch.setattr(spline_estimator, 'fit_gam_equation', failing)
    with pytest.raises(NumericalError) as info:
        fit_tv_var_gam(design, [0.5], threads=1)
    assert '方程 0' in str(info.value)
    assert isinstance(info.value.__cause__, NumericalError)
    assert str(info.value.__cause__) == 'GCV无定义'

    def unidentified(design, eq_index, basis, lambdas=None):
        raise IdentificationError("行数不足", constraint='m > k')

    monkeypatch.setattr(spline_estimator, 'fit_gam_equation', unidentified)
    with pytest.raises(IdentificationError) as info:
        fit_tv_var_gam(design, [0.5], threads=1)
    assert info.value.constraint == 'm > k'
    assert isinstance(info.value.__cause__, IdentificationError)
