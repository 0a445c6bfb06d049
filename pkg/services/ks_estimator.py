# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 核平滑估计器
平稳VAR（GLM、GLM-L1）、核平滑时变VAR（KS、KS-L1）以及按时间分层的带宽选择
"""

import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import config
from models import (LaggedDesign, TimeVaryingVarModel, VarCoefficients,
                    METHOD_GLM, METHOD_GLM_L1, METHOD_KS, METHOD_KS_L1)
from services.dataset import subset_design
from services.kernel import kernel_weights
from services.penalized_regression import weighted_least_squares_multi, weighted_lasso_cv_multi
from utils.errors import DataError, IdentificationError, NumericalError
from utils.parallel import run_tasks, spawn_seeds

logger = logging.getLogger(__name__)


@dataclass
class BandwidthSelection:
    """带宽选择结果"""
    b_hat: float
    candidates: np.ndarray
    errors: np.ndarray
    fold_errors: np.ndarray  # folds × 候选数 × 测试点数
    test_rows: List[np.ndarray] = field(default_factory=list)

    @property
    def at_endpoint(self) -> bool:
        """最小误差落在候选网格端点（应扩大搜索范围）"""
        index = int(np.argmin(self.errors))
        order = np.argsort(self.candidates)
        return index in (int(order[0]), int(order[-1]))

    def to_frame_rows(self) -> List[dict]:
        return [{'bandwidth': float(b), 'error': float(e)} for b, e in zip(self.candidates, self.errors)]


def coefficients_from_slopes(slopes: np.ndarray, p: int, n_lags: int) -> np.ndarray:
    """把 q×p 的斜率矩阵（按滞后阶优先排列的行）整理为 p×p×L 系数数组"""
    return slopes.T.reshape(p, n_lags, p).transpose(0, 2, 1)


def _fit_local(design: LaggedDesign, weights: np.ndarray, regularized: bool,
               seed: Optional[int], folds: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """
    在给定观测权重下拟合全部p个方程

    Returns:
        (intercepts p, coeffs p×p×L, lambdas p 或 None)
    """
    if regularized:
        intercepts, slopes, lambdas = weighted_lasso_cv_multi(
            design.predictors, design.responses, weights, folds=folds, seed=seed)
    else:
        intercepts, slopes = weighted_least_squares_multi(design.predictors, design.responses, weights)
        lambdas = None
    return intercepts, coefficients_from_slopes(slopes, design.p, len(design.lags)), lambdas


def _check_stationary_identification(design: LaggedDesign, regularized: bool, folds: Optional[int] = None):
    m = design.included_rows
    folds = folds or config.LAMBDA_CV_FOLDS
    if regularized:
        if m < folds:
            raise IdentificationError(
                f"正则化估计需要至少 {folds} 行用于λ交叉验证, 实际 {m} 行",
                constraint=f'included_rows >= {folds}',
            )
    elif m <= design.q + 1:
        raise IdentificationError(
            f"设计矩阵行数 {m} 不足以识别 {design.q} 个斜率 (需要大于 {design.q + 1})",
            constraint='included_rows > q + 1',
        )


def fit_stationary_var(design: LaggedDesign, regularized: bool = False, seed: Optional[int] = None,
                       folds: Optional[int] = None) -> VarCoefficients:
    """
    平稳VAR：各方程等权重独立拟合（GLM），或以交叉验证λ的lasso拟合（GLM-L1）
    """
    _check_stationary_identification(design, regularized, folds)
    weights = np.ones(design.included_rows)
    intercepts, coeffs, lambdas = _fit_local(design, weights, regularized, seed, folds)
    return VarCoefficients(intercepts=intercepts, coeffs=coeffs, lags=list(design.lags),
                           labels=list(design.labels), lambdas=lambdas, scaling=design.scaling)


def stationary_model(design: LaggedDesign, est_points: Sequence[float], regularized: bool = False,
                     seed: Optional[int] = None, folds: Optional[int] = None) -> TimeVaryingVarModel:
    """把平稳估计表示为E个相同切片的时变模型"""
    est_points = np.asarray(est_points, dtype=float)
    fit = fit_stationary_var(design, regularized, seed, folds)
    n_est = len(est_points)
    return TimeVaryingVarModel(
        est_points=est_points,
        intercepts=np.repeat(fit.intercepts[:, None], n_est, axis=1),
        coeffs=np.repeat(fit.coeffs[..., None], n_est, axis=3),
        method=METHOD_GLM_L1 if regularized else METHOD_GLM,
        lags=list(design.lags),
        labels=list(design.labels),
        lambdas=None if fit.lambdas is None else np.repeat(fit.lambdas[:, None], n_est, axis=1),
        scaling=design.scaling,
        diagnostics={'n_util': np.full(n_est, float(design.included_rows))},
    )


def _validate_est_points(est_points) -> np.ndarray:
    est_points = np.asarray(est_points, dtype=float)
    if est_points.ndim != 1 or len(est_points) == 0:
        raise DataError("估计点不能为空")
    if np.any(est_points < 0) or np.any(est_points > 1):
        raise DataError("估计点必须位于 [0, 1] 内")
    return est_points


def fit_tv_var_ks(design: LaggedDesign, est_points: Sequence[float], b: float, regularized: bool = False,
                  seed: Optional[int] = None, threads: Optional[int] = None,
                  folds: Optional[int] = None) -> TimeVaryingVarModel:
    """
    核平滑时变VAR：在每个估计点以高斯核权重拟合局部模型

    Args:
        design: 设计矩阵
        est_points: 估计点
        b: 带宽（所有方程共用）
        regularized: 是否使用交叉验证λ的加权lasso
        seed: λ交叉验证折划分的种子（所有估计点与方程共用同一划分）
        threads: 估计点并行的线程数
        folds: λ交叉验证折数
    """
    est_points = _validate_est_points(est_points)
    if not b > 0:
        raise DataError(f"带宽必须为正数: {b}")

    kernels = [kernel_weights(t_e, design.response_times, b) for t_e in est_points]
    n_util = np.array([k.n_util for k in kernels])

    if regularized:
        _check_stationary_identification(design, regularized=True, folds=folds)
    else:
        bad = np.flatnonzero(~(n_util > design.q + 1))
        if len(bad):
            points = ', '.join(f"{est_points[i]:.3f} (N_util={n_util[i]:.2f})" for i in bad)
            raise IdentificationError(
                f"以下估计点的有效样本量不足 (需要大于 {design.q + 1}): {points}",
                constraint='N_util > q + 1',
            )

    results = run_tasks(lambda kernel: _fit_local(design, kernel.weights, regularized, seed, folds), kernels, threads)

    model = TimeVaryingVarModel(
        est_points=est_points,
        intercepts=np.column_stack([r[0] for r in results]),
        coeffs=np.stack([r[1] for r in results], axis=-1),
        method=METHOD_KS_L1 if regularized else METHOD_KS,
        lags=list(design.lags),
        labels=list(design.labels),
        bandwidth=float(b),
        lambdas=np.column_stack([r[2] for r in results]) if regularized else None,
        scaling=design.scaling,
        diagnostics={'n_util': n_util},
    )
    logger.info(f"核平滑估计完成: 方法 {model.method}, 带宽 {b:g}, 估计点 {len(est_points)}, "
                f"N_util 范围 [{n_util.min():.1f}, {n_util.max():.1f}]")
    return model


def default_foldsize(n: int) -> int:
    """测试集大小 ⌈(0.2n)^{2/3}⌉"""
    return int(math.ceil((0.2 * n) ** (2.0 / 3.0)))


def stratified_test_rows(m: int, foldsize: int, seed: Optional[int]) -> np.ndarray:
    """在m个设计行上等间隔选取foldsize个测试行，起点按种子随机平移"""
    spacing = m / foldsize
    offset = np.random.default_rng(seed).uniform(0.0, spacing)
    rows = np.floor(offset + spacing * np.arange(foldsize)).astype(np.int64)
    return np.minimum(rows, m - 1)


def _candidate_errors(design: LaggedDesign, test_rows: np.ndarray, b: float,
                      regularized: bool, seed: Optional[int]) -> np.ndarray:
    """某候选带宽下每个测试行的平均绝对预测误差"""
    train_mask = np.ones(design.included_rows, dtype=bool)
    train_mask[test_rows] = False
    train = subset_design(design, np.flatnonzero(train_mask))

    errors = np.empty(len(test_rows))
    for position, row in enumerate(test_rows):
        kernel = kernel_weights(design.response_times[row], train.response_times, b)
        if not regularized and not kernel.n_util > design.q + 1:
            raise IdentificationError(
                f"带宽 {b:g} 在测试时点 {design.response_times[row]:.3f} 的有效样本量 {kernel.n_util:.2f} 不足",
                constraint='N_util > q + 1',
            )
        intercepts, coeffs, _ = _fit_local(train, kernel.weights, regularized, seed)
        local = VarCoefficients(intercepts, coeffs, list(design.lags), list(design.labels))
        prediction = local.predict(design.predictors[row])[0]
        errors[position] = np.mean(np.abs(design.responses[row] - prediction))
    return errors


def select_bandwidth(design: LaggedDesign, candidates: Optional[Sequence[float]] = None, folds: int = None,
                     foldsize: Optional[int] = None, regularized: bool = False, seed: Optional[int] = None,
                     threads: Optional[int] = None) -> BandwidthSelection:
    """
    按时间分层的交叉验证选择带宽

    每折在设计行上等间隔（随机平移起点）选取测试行，用其余行在测试时点拟合局部模型，
    预测被留出的p个响应，取平均绝对误差；返回误差最小的带宽。
    某候选带宽无法识别或数值求解失败时其误差记为无穷大。
    """
    candidates = np.asarray(config.DEFAULT_BANDWIDTH_GRID if candidates is None else candidates, dtype=float)
    if candidates.ndim != 1 or len(candidates) == 0:
        raise DataError("候选带宽不能为空")
    if np.any(~(candidates > 0)):
        raise DataError(f"候选带宽必须全部为正数: {candidates.tolist()}")
    folds = folds or config.DEFAULT_BW_FOLDS
    m = design.included_rows
    foldsize = foldsize or default_foldsize(design.n_occasions)
    if foldsize < 2:
        raise DataError(f"测试集大小至少为2: {foldsize}")
    if foldsize >= m:
        raise DataError(f"测试集大小 {foldsize} 超过设计矩阵行数 {m}")

    fold_seeds = spawn_seeds(seed, folds)
    fold_errors = np.empty((folds, len(candidates), foldsize))
    test_sets = []

    for f, fold_seed in enumerate(fold_seeds):
        test_rows = stratified_test_rows(m, foldsize, fold_seed)
        test_sets.append(test_rows)

        def evaluate(b):
            try:
                return _candidate_errors(design, test_rows, b, regularized, fold_seed)
            except (DataError, NumericalError) as e:
                logger.warning(f"带宽 {b:g} 无法拟合, 误差记为无穷大: {str(e)}")
                return np.full(foldsize, np.inf)

        for c, errors in enumerate(run_tasks(evaluate, candidates, threads)):
            fold_errors[f, c] = errors

    errors = fold_errors.mean(axis=(0, 2))
    if not np.any(np.isfinite(errors)):
        raise IdentificationError("所有候选带宽都无法拟合", constraint='N_util > q + 1')

    selection = BandwidthSelection(
        b_hat=float(candidates[int(np.argmin(errors))]),
        candidates=candidates,
        errors=errors,
        fold_errors=fold_errors,
        test_rows=test_sets,
    )
    logger.info(f"带宽选择完成: b_hat = {selection.b_hat:g}, 测试集大小 {foldsize}, 折数 {folds}")
    if selection.at_endpoint:
        logger.warning(f"所选带宽 {selection.b_hat:g} 位于候选网格端点, 建议扩大搜索范围")
    return selection
