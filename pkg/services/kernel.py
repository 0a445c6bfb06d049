# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 高斯核权重
权重取峰值为1的高斯形状：密度前因子在加权最小二乘中被约掉，因此省略
"""

import numpy as np

from models import KernelWeights
from utils.errors import DataError


def kernel_weights(t_e: float, times: np.ndarray, b: float) -> KernelWeights:
    """
    计算估计点 t_e 处的核权重 w_j = exp(−(t_j − t_e)² / (2b²))

    Args:
        t_e: 估计点，位于归一化时间轴[0,1]
        times: 各观测的归一化时间
        b: 带宽（相对于整个序列时长，无量纲）
    """
    if not b > 0:
        raise DataError(f"带宽必须为正数: {b}")
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise DataError("时间序列为空")

    weights = np.exp(-np.square(times - t_e) / (2.0 * b * b))
    return KernelWeights(est_point=float(t_e), bandwidth=float(b),
                         weights=weights, n_util=float(weights.sum()))


def effective_sample_size(w: KernelWeights) -> float:
    """有效样本量 N_util：权重之和"""
    return float(np.sum(w.weights))
