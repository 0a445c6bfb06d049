# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 核平滑估计器测试
平稳VAR、核平滑时变VAR与带宽选择
"""

import numpy as np
import pytest

from models import (ParameterFunctionSpec, RegressionProblem, TimeSeriesDataset,
                    METHOD_GLM, METHOD_GLM_L1, METHOD_KS, METHOD_KS_L1)
from services.dataset import build_lagged_design, standardize, subset_design
from services import ks_estimator
from services.kernel import kernel_weights
from services.ks_estimator import (BandwidthSelection, default_foldsize, fit_stationary_var, fit_tv_var_ks,
                                   select_bandwidth, stationary_model, stratified_test_rows)
from services.penalized_regression import weighted_least_squares
from services.simulation import render_coefficient_array, simulate_tv_var
from utils.errors import DataError, IdentificationError, NumericalError
from utils.model_store import ModelStore

STATIONARY_A = np.array([
    [0.5, 0.2, 0.0],
    [0.0, 0.4, -0.2],
    [0.1, 0.0, 0.3],
])


def simulate_var(coefficients, n, seed, sigma=1.0):
    """coefficients(t) 返回 t∈(0,1] 处的 p×p 系数矩阵"""
    rng = np.random.default_rng(seed)
    p = coefficients(0.0).shape[0]
    values = np.zeros((n, p))
    values[0] = rng.normal(0.0, sigma, p)
    for t in range(1, n):
        values[t] = coefficients((t + 1) / n) @ values[t - 1] + rng.normal(0.0, sigma, p)
    return TimeSeriesDataset(values=values, labels=[f"V{j + 1}" for j in range(p)])


def stationary_design(n=300, seed=0, scale=True):
    design = build_lagged_design(simulate_var(lambda t: STATIONARY_A, n, seed), [1])
    return standardize(design) if scale else design


def test_glm_consistency():
    """已知平稳VAR(1)、大样本：GLM系数逐元素接近真值"""
    design = stationary_design(n=5000, seed=1, scale=False)
    fit = fit_stationary_var(design)
    assert fit.coeffs.shape == (3, 3, 1)
    assert np.all(np.abs(fit.coeffs[:, :, 0] - STATIONARY_A) < 0.05)
    assert fit.lambdas is None


def test_glm_l1_white_noise_is_sparse():
    """白噪声、p=3：GLM-L1 至少80%的斜率恰好为0（汇总40个种子）"""
    zeros, total = 0, 0
    for seed in range(40):
        design = standardize(build_lagged_design(simulate_var(lambda t: np.zeros((3, 3)), 200, seed), [1]))
        fit = fit_stationary_var(design, regularized=True, seed=seed)
        zeros += int(np.sum(fit.coeffs == 0.0))
        total += fit.coeffs.size
        assert np.all(fit.lambdas > 0)
    assert zeros / total >= 0.8


def test_glm_identification():
    """行数不超过 q+1 时无法识别"""
    design = stationary_design(n=50)
    small = subset_design(design, np.arange(design.q + 1))
    with pytest.raises(IdentificationError) as info:
        fit_stationary_var(small)
    assert 'q + 1' in info.value.constraint
    with pytest.raises(IdentificationError):
        fit_stationary_var(subset_design(design, np.arange(5)), regularized=True, seed=1)


def test_stationary_model_has_identical_slices():
    design = stationary_design(n=120)
    model = stationary_model(design, np.linspace(0, 1, 5), regularized=True, seed=3)
    assert model.method == METHOD_GLM_L1
    assert model.coeffs.shape == (3, 3, 1, 5)
    for e in range(1, 5):
        assert np.array_equal(model.coeffs[..., e], model.coeffs[..., 0])
        assert np.array_equal(model.lambdas[:, e], model.lambdas[:, 0])
    assert stationary_model(design, [0.5]).method == METHOD_GLM


@pytest.mark.parametrize('regularized', [False, True])
def test_flat_kernel_reduces_to_stationary(regularized):
    """带宽远大于1时每个切片等于平稳估计"""
    design = stationary_design(n=400, seed=4)
    est_points = np.linspace(0, 1, 4)
    stationary = stationary_model(design, est_points, regularized=regularized, seed=9)
    checks = [(100.0, 1e-4)] if regularized else [(100.0, 1e-4), (10.0, 1e-3)]
    for b, tolerance in checks:
        model = fit_tv_var_ks(design, est_points, b, regularized=regularized, seed=9)
        assert model.method == (METHOD_KS_L1 if regularized else METHOD_KS)
        assert np.allclose(model.coeffs, stationary.coeffs, atol=tolerance)
        assert np.allclose(model.intercepts, stationary.intercepts, atol=tolerance)


def test_single_point_equals_direct_solver():
    """E=1：与直接调用逐方程求解器一致"""
    design = stationary_design(n=150, seed=5)
    model = fit_tv_var_ks(design, [0.5], 0.2)
    weights = kernel_weights(0.5, design.response_times, 0.2).weights
    for i in range(design.p):
        solution = weighted_least_squares(RegressionProblem(X=design.predictors, y=design.responses[:, i], w=weights))
        assert model.intercepts[i, 0] == pytest.approx(solution.intercept, abs=1e-10)
        assert np.allclose(model.coeffs[i, :, 0, 0], solution.slopes, atol=1e-10)
    assert model.diagnostics['n_util'][0] == pytest.approx(weights.sum())


def test_linear_generator_ks_beats_glm():
    """线性变化的参数：KS-L1 的平均绝对误差小于 GLM-L1（10个种子中的多数）"""
    kinds = [['linear_up', 'zero', 'zero'],
             ['zero', 'constant_nonzero', 'zero'],
             ['zero', 'linear_down', 'constant_nonzero']]
    specs = np.array([[ParameterFunctionSpec(kind, theta=0.6) for kind in row] for row in kinds], dtype=object)
    varying = np.array([[True, False, False], [False, False, False], [False, True, False]])
    wins = 0
    for seed in range(10):
        truth = render_coefficient_array(specs, 530, seed=seed)
        data = simulate_tv_var(truth, seed=seed)
        design = standardize(build_lagged_design(data, [1]))
        est_points = np.linspace(0, 1, 10)
        true_values = truth.evaluate_at(est_points)
        ks = fit_tv_var_ks(design, est_points, 0.15, regularized=True, seed=seed).unscaled()
        glm = stationary_model(design, est_points, regularized=True, seed=seed).unscaled()
        ks_error = np.abs(ks.coeffs[:, :, 0, :] - true_values)[varying].mean()
        glm_error = np.abs(glm.coeffs[:, :, 0, :] - true_values)[varying].mean()
        wins += ks_error < glm_error
    assert wins >= 6


def test_monotone_smoothing():
    """带宽增大时系数轨迹的跨时间方差不增（至少95%的系数）"""
    raw = build_lagged_design(
        simulate_var(lambda t: np.diag([0.4, 0.3, 0.2, 0.3, 0.1]), 400, seed=6), [1])
    design = standardize(raw)
    est_points = np.linspace(0, 1, 15)
    variances = [fit_tv_var_ks(design, est_points, b).coeffs.var(axis=-1).ravel() for b in (0.1, 0.5, 2.0)]
    for narrow, wide in zip(variances[:-1], variances[1:]):
        assert np.mean(wide <= narrow) >= 0.95


def test_slice_independence_and_determinism():
    """估计点置换时切片相应置换；相同输入得到逐位相同的结果"""
    design = stationary_design(n=200, seed=7)
    points = np.array([0.1, 0.4, 0.9])
    model = fit_tv_var_ks(design, points, 0.2, regularized=True, seed=2)
    again = fit_tv_var_ks(design, points, 0.2, regularized=True, seed=2)
    assert np.array_equal(model.coeffs, again.coeffs)
    assert np.array_equal(model.lambdas, again.lambdas)

    order = [2, 0, 1]
    permuted = fit_tv_var_ks(design, points[order], 0.2, regularized=True, seed=2)
    assert np.allclose(permuted.coeffs, model.coeffs[..., order])


def test_ks_identification_and_validation():
    design = stationary_design(n=100, seed=8)
    with pytest.raises(IdentificationError) as info:
        fit_tv_var_ks(design, [0.0, 0.5], 0.001)
    assert 'N_util' in info.value.constraint
    with pytest.raises(DataError):
        fit_tv_var_ks(design, [0.5], 0.0)
    with pytest.raises(DataError):
        fit_tv_var_ks(design, [1.5], 0.2)
    with pytest.raises(DataError):
        fit_tv_var_ks(design, [], 0.2)


def test_model_json_round_trip(tmp_path):
    """模型JSON存取无损"""
    design = stationary_design(n=150, seed=10)
    model = fit_tv_var_ks(design, np.linspace(0, 1, 6), 0.3, regularized=True, seed=4)
    path = ModelStore().save_model(model, str(tmp_path / 'model.json'), metadata={'seed': 4})
    loaded = ModelStore().load_model(path)
    assert loaded.method == model.method and loaded.bandwidth == model.bandwidth
    assert np.array_equal(loaded.coeffs, model.coeffs)
    assert np.array_equal(loaded.intercepts, model.intercepts)
    assert np.array_equal(loaded.lambdas, model.lambdas)
    assert np.array_equal(loaded.scaling.response_sd, model.scaling.response_sd)
    assert np.array_equal(loaded.diagnostics['n_util'], model.diagnostics['n_util'])


def test_default_foldsize():
    assert default_foldsize(103) == 8
    assert default_foldsize(530) == 23


def test_stratified_test_rows():
    rows = stratified_test_rows(100, 8, seed=3)
    assert len(rows) == 8
    assert np.all(np.diff(rows) >= 12)
    assert rows.min() >= 0 and rows.max() < 100
    assert np.array_equal(rows, stratified_test_rows(100, 8, seed=3))


def test_select_bandwidth_stationary_prefers_wide():
    """平稳数据、10折：所选带宽落在12个候选的上半段（10个种子中至少8个），最窄候选误差大于最宽候选"""
    hits = 0
    for seed in range(10):
        design = stationary_design(n=300, seed=100 + seed)
        selection = select_bandwidth(design, folds=10, seed=seed)
        candidates = list(selection.candidates)
        assert len(candidates) == 12
        hits += candidates.index(selection.b_hat) >= len(candidates) // 2
        assert selection.errors[0] > selection.errors[candidates.index(0.5)]
    assert hits >= 8


def test_select_bandwidth_step_prefers_narrow():
    """阶跃变化的参数（n=798）：所选带宽在候选网格的下半段（10个种子中至少8个）"""
    def coefficients(t):
        high = 0.8 if t < 0.5 else 0.0
        return np.diag([high, 0.8 - high])

    hits = 0
    for seed in range(10):
        design = standardize(build_lagged_design(simulate_var(coefficients, 798, seed=200 + seed), [1]))
        selection = select_bandwidth(design, folds=10, seed=seed)
        hits += selection.b_hat <= 0.22
    assert hits >= 8


def test_select_bandwidth_errors_shape_and_validation():
    design = stationary_design(n=200, seed=11)
    selection = select_bandwidth(design, [0.1, 0.3, 1.0], folds=2, foldsize=6, seed=1)
    assert selection.fold_errors.shape == (2, 3, 6)
    assert np.allclose(selection.errors, selection.fold_errors.mean(axis=(0, 2)))
    assert selection.b_hat in (0.1, 0.3, 1.0)
    assert [row['bandwidth'] for row in selection.to_frame_rows()] == [0.1, 0.3, 1.0]

    with pytest.raises(DataError):
        select_bandwidth(design, [0.1, -0.2], seed=1)
    with pytest.raises(DataError):
        select_bandwidth(design, [0.1], foldsize=design.included_rows, seed=1)
    with pytest.raises(DataError):
        select_bandwidth(design, [0.1], foldsize=1, seed=1)
    with pytest.raises(IdentificationError):
        select_bandwidth(design, [1e-4], seed=1)


def test_select_bandwidth_numerical_failure_is_infinite(monkeypatch):
    """某候选带宽数值求解失败时误差记为无穷大，其余候选照常比较"""
    original = ks_estimator._candidate_errors

    def failing(design, test_rows, b, regularized, seed):
        if b == 0.1:
            raise NumericalError("局部加权最小二乘病态")
        return original(design, test_rows, b, regularized, seed)

    monkeypatch.setattr(ks_estimator, '_candidate_errors', failing)
    design = stationary_design(n=200, seed=11)
    selection = select_bandwidth(design, [0.1, 0.3, 1.0], folds=2, foldsize=6, seed=1, threads=1)
    assert np.isinf(selection.errors[0])
    assert np.all(np.isfinite(selection.errors[1:]))
    assert selection.b_hat in (0.3, 1.0)

    def always_failing(*args):
        raise NumericalError("局部加权最小二乘病态")

    monkeypatch.setattr(ks_estimator, '_candidate_errors', always_failing)
    with pytest.raises(IdentificationError):
        select_bandwidth(design, [0.1, 0.3], folds=1, foldsize=6, seed=1, threads=1)


def test_bandwidth_endpoint_flag():
    def selection(errors):
        return BandwidthSelection(b_hat=0.0, candidates=np.array([0.1, 0.2, 0.3]), errors=np.array(errors),
                                  fold_errors=np.empty((1, 3, 2)))

    assert selection([0.5, 0.6, 0.7]).at_endpoint
    assert selection([0.9, 0.6, 0.5]).at_endpoint
    assert not selection([0.9, 0.4, 0.5]).at_endpoint
