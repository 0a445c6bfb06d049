# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 估计调度
按EstimationSpec构造设计矩阵并分派到对应的估计器
"""

import logging
from typing import Optional, Tuple

from models import (EstimationSpec, LaggedDesign, TimeSeriesDataset, TimeVaryingVarModel,
                    METHOD_GLM, METHOD_GLM_L1, METHOD_KS, METHOD_KS_L1, METHOD_GAM_ST)
from services.dataset import build_lagged_design, standardize
from services.ks_estimator import fit_tv_var_ks, stationary_model
from services.spline_estimator import fit_tv_var_gam
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


def prepare_design(data: TimeSeriesDataset, spec: EstimationSpec) -> LaggedDesign:
    """构造设计矩阵，按配置标准化"""
    design = build_lagged_design(data, spec.lags)
    return standardize(design) if spec.standardize else design


def fit_design(design: LaggedDesign, spec: EstimationSpec, threads: Optional[int] = None) -> TimeVaryingVarModel:
    """在已构造的设计矩阵上按方法拟合"""
    est_points = spec.resolved_est_points()
    method = spec.method

    if method in (METHOD_GLM, METHOD_GLM_L1):
        model = stationary_model(design, est_points, regularized=method == METHOD_GLM_L1, seed=spec.seed,
                                 folds=spec.folds)
    elif method in (METHOD_KS, METHOD_KS_L1):
        if spec.bandwidth is None:
            raise ConfigError(f"方法 {method} 需要指定带宽 (或先运行带宽选择)")
        model = fit_tv_var_ks(design, est_points, spec.bandwidth, regularized=method == METHOD_KS_L1,
                              seed=spec.seed, threads=threads, folds=spec.folds)
    else:
        model = fit_tv_var_gam(design, est_points, k=spec.k, threshold=method == METHOD_GAM_ST,
                               level=spec.level, k_max=spec.k_max, threads=threads)

    model.spec = spec.to_dict()
    model.diagnostics['included_rows'] = design.included_rows
    model.diagnostics['total_rows'] = design.total_rows
    return model


def fit_model(data: TimeSeriesDataset, spec: EstimationSpec,
              threads: Optional[int] = None) -> TimeVaryingVarModel:
    """
    拟合时变VAR模型

    Args:
        data: 时间序列数据集
        spec: 完整估计配置
        threads: 并行线程数

    Returns:
        TimeVaryingVarModel: 标准化尺度上的模型（scaling记录了换算参数）
    """
    model, _ = fit_model_with_design(data, spec, threads)
    return model


def fit_model_with_design(data: TimeSeriesDataset, spec: EstimationSpec,
                          threads: Optional[int] = None) -> Tuple[TimeVaryingVarModel, LaggedDesign]:
    design = prepare_design(data, spec)
    return fit_design(design, spec, threads), design
