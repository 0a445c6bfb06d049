# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 数据集服务
读取数据、按beep/day连续性规则构造滞后设计矩阵、变量标准化
"""

import logging
from typing import Dict, List, Any, Sequence

import numpy as np

from models import TimeSeriesDataset, LaggedDesign, DesignScaling
from services.csv_manager import CSVManager
from utils.errors import DataError, IdentificationError

logger = logging.getLogger(__name__)


def load_csv(path: str, roles: Dict[str, Any] = None) -> TimeSeriesDataset:
    """
    读取CSV为时间序列数据集

    Args:
        path: 文件路径
        roles: 列角色映射，见 CSVManager.read_dataset
    """
    return CSVManager().read_dataset(path, roles or {})


def export_csv(data: TimeSeriesDataset, path: str, metadata: Dict[str, Any] = None) -> str:
    """写出数据集（时间戳与beep/day列一并写出，可被load_csv读回）"""
    return CSVManager().write_dataset(data, path, metadata=metadata)


def consecutive_pairs(data: TimeSeriesDataset) -> np.ndarray:
    """
    相邻时点是否连续：返回长度n的布尔数组，元素t表示 (t−1, t) 是否连续

    有beep/day时要求同一天且beep递增1；否则文件中相邻行均视为连续。
    """
    flags = np.zeros(data.n, dtype=bool)
    if data.has_markers:
        flags[1:] = (data.day[1:] == data.day[:-1]) & (data.beep[1:] == data.beep[:-1] + 1)
    else:
        flags[1:] = True
    return flags


def included_response_rows(data: TimeSeriesDataset, lags: Sequence[int]) -> np.ndarray:
    """返回可以进入设计矩阵的响应时点下标"""
    max_lag = max(lags)
    consecutive = consecutive_pairs(data)
    missing = data.missing_rows()

    rows = []
    for t in range(max_lag, data.n):
        if missing[t]:
            continue
        ok = True
        for lag in lags:
            # 滞后链上每一步都必须连续
            if missing[t - lag] or not consecutive[t - lag + 1:t + 1].all():
                ok = False
                break
        if ok:
            rows.append(t)
    return np.asarray(rows, dtype=np.int64)


def build_lagged_design(data: TimeSeriesDataset, lags: Sequence[int] = (1,)) -> LaggedDesign:
    """
    构造VAR设计矩阵

    Args:
        data: 时间序列数据集
        lags: 滞后阶集合，必须为正整数

    Returns:
        LaggedDesign: 仅包含满足连续性规则且无缺失的 (t−lag, t) 行
    """
    lags = sorted({int(lag) for lag in lags})
    if not lags or lags[0] < 1:
        raise DataError(f"滞后阶必须为正整数: {lags}")

    rows = included_response_rows(data, lags)
    times = data.timestamps()
    p = data.p
    q = p * len(lags)
    total = data.n - max(lags)

    if len(rows) < q + 2:
        raise IdentificationError(
            f"设计矩阵只有 {len(rows)} 行, 至少需要 {q + 2} 行 (p·|lags|+2)",
            constraint='included_rows >= q + 2',
        )

    predictors = np.hstack([data.values[rows - lag] for lag in lags])
    responses = data.values[rows].copy()

    design = LaggedDesign(
        predictors=predictors,
        responses=responses,
        response_times=times[rows].copy(),
        included_rows=len(rows),
        total_rows=total,
        lags=lags,
        labels=list(data.labels),
        row_index=rows,
    )
    logger.info(design.summary_line())
    return design


def _column_names(design: LaggedDesign) -> List[str]:
    names = []
    for lag in design.lags:
        names.extend(f"{label}(t-{lag})" for label in design.labels)
    return names


def standardize(design: LaggedDesign) -> LaggedDesign:
    """
    把预测变量与响应变量按列标准化为均值0、标准差1（样本标准差，除数m−1）

    已标准化的设计再次标准化时，缩放参数复合到原始尺度，逆变换仍回到原始数据。
    """
    def scale(matrix: np.ndarray, names: List[str]):
        mean = matrix.mean(axis=0)
        sd = matrix.std(axis=0, ddof=1)
        constant = np.flatnonzero(~(sd > 0))
        if len(constant):
            raise DataError(f"列方差为0, 无法标准化: {', '.join(names[i] for i in constant)}")
        return (matrix - mean) / sd, mean, sd

    x, x_mean, x_sd = scale(design.predictors, _column_names(design))
    y, y_mean, y_sd = scale(design.responses, [f"{label}(t)" for label in design.labels])

    if design.scaling is not None:
        old = design.scaling
        x_mean = old.predictor_mean + old.predictor_sd * x_mean
        x_sd = old.predictor_sd * x_sd
        y_mean = old.response_mean + old.response_sd * y_mean
        y_sd = old.response_sd * y_sd

    return LaggedDesign(
        predictors=x,
        responses=y,
        response_times=design.response_times.copy(),
        included_rows=design.included_rows,
        total_rows=design.total_rows,
        lags=list(design.lags),
        labels=list(design.labels),
        row_index=design.row_index.copy(),
        scaling=DesignScaling(x_mean, x_sd, y_mean, y_sd),
    )


def unstandardize(design: LaggedDesign) -> LaggedDesign:
    """标准化的逆变换"""
    if design.scaling is None:
        return design
    s = design.scaling
    return LaggedDesign(
        predictors=design.predictors * s.predictor_sd + s.predictor_mean,
        responses=design.responses * s.response_sd + s.response_mean,
        response_times=design.response_times.copy(),
        included_rows=design.included_rows,
        total_rows=design.total_rows,
        lags=list(design.lags),
        labels=list(design.labels),
        row_index=design.row_index.copy(),
        scaling=None,
    )


def apply_scaling(design: LaggedDesign, scaling: DesignScaling) -> LaggedDesign:
    """用给定的缩放参数（如拟合模型时记录的参数）标准化设计矩阵"""
    return LaggedDesign(
        predictors=(design.predictors - scaling.predictor_mean) / scaling.predictor_sd,
        responses=(design.responses - scaling.response_mean) / scaling.response_sd,
        response_times=design.response_times.copy(),
        included_rows=design.included_rows,
        total_rows=design.total_rows,
        lags=list(design.lags),
        labels=list(design.labels),
        row_index=design.row_index.copy(),
        scaling=scaling,
    )


def subset_design(design: LaggedDesign, rows: np.ndarray) -> LaggedDesign:
    """按行下标取设计矩阵子集（缩放参数保持不变）"""
    rows = np.asarray(rows)
    return LaggedDesign(
        predictors=design.predictors[rows],
        responses=design.responses[rows],
        response_times=design.response_times[rows],
        included_rows=len(design.response_times[rows]),
        total_rows=design.total_rows,
        lags=list(design.lags),
        labels=list(design.labels),
        row_index=design.row_index[rows],
        scaling=design.scaling,
    )
