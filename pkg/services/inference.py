# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 推断服务
块bootstrap抽样分布与节点时变预测误差

注意：正则化估计存在收缩偏差，bootstrap分位数描述的是估计量的抽样变异，
不是围绕真实参数的置信区间。
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import config
from models import (BootstrapDistribution, EstimationSpec, PredictionErrorReport,
                    TimeSeriesDataset, TimeVaryingVarModel)
from services.dataset import apply_scaling, build_lagged_design
from services.estimation import fit_model
from utils.errors import DataError, TvvarError
from utils.parallel import run_tasks, spawn_seeds

logger = logging.getLogger(__name__)

PREDICTION_METHODS = ('weighted', 'closest')


def block_boundaries(n: int, blocks: int) -> List[Tuple[int, int]]:
    """把n个时点切成blocks个连续块，余数从前往后每块多分一个"""
    if blocks < 2:
        raise DataError(f"块数至少为2: {blocks}")
    if blocks > n:
        raise DataError(f"块数 {blocks} 超过时点数 {n}")
    base, remainder = divmod(n, blocks)
    sizes = [base + (1 if b < remainder else 0) for b in range(blocks)]
    ends = np.cumsum(sizes)
    return [(int(end - size), int(end)) for size, end in zip(sizes, ends)]


def draw_block_order(seed: Optional[int], blocks: int) -> np.ndarray:
    """有放回地抽取blocks个块下标（按抽取顺序拼接）"""
    return np.random.default_rng(seed).integers(0, blocks, blocks)


def resample_blocks(data: TimeSeriesDataset, order: Sequence[int], bounds: List[Tuple[int, int]]) -> TimeSeriesDataset:
    """
    按块顺序拼接重抽样序列

    块内保留原有beep/day；拼接处除非下一块恰好是上一块在原序列中的后继块，否则重新编号为新的一天，
    使连续性规则不会跨拼接处构造滞后对。时间戳按位置沿用原序列。
    """
    segments = [np.arange(*bounds[b]) for b in order]
    index = np.concatenate(segments)

    if data.has_markers:
        beep, day = data.beep[index], data.day[index]
    else:
        beep, day = index + 1, np.ones(len(index), dtype=np.int64)

    breaks = np.zeros(len(index), dtype=bool)
    breaks[1:] = day[1:] != day[:-1]
    position = 0
    for previous, current in zip(order[:-1], order[1:]):
        position += bounds[previous][1] - bounds[previous][0]
        if current != previous + 1:
            breaks[position] = True
    new_day = 1 + np.cumsum(breaks)

    return TimeSeriesDataset(
        values=data.values[index],
        labels=list(data.labels),
        time_norm=data.timestamps().copy(),
        beep=beep,
        day=new_day,
    )


def block_bootstrap(data: TimeSeriesDataset, model_spec: EstimationSpec, nB: int = None, blocks: int = None,
                    seeds: Optional[Sequence[int]] = None, quantiles: Sequence[float] = None,
                    threads: Optional[int] = None) -> BootstrapDistribution:
    """
    块bootstrap：每个重复样本有放回地抽取blocks个连续块并拼接，按model_spec重新拟合

    Args:
        data: 原始数据集
        model_spec: 完整估计配置（重新拟合时使用其种子）
        nB: 重复次数
        blocks: 块数
        seeds: 每个重复样本的种子，None时由model_spec.seed派生
        quantiles: 需要汇总的分位数概率

    Raises:
        DataError: 失败的重复样本超过配置的比例
    """
    nB = nB or config.BOOTSTRAP_NB
    blocks = blocks or config.BOOTSTRAP_BLOCKS
    probs = sorted(float(q) for q in (config.BOOTSTRAP_QUANTILES if quantiles is None else quantiles))
    if nB < 1:
        raise DataError(f"重复次数至少为1: {nB}")
    if any(not 0 <= q <= 1 for q in probs):
        raise DataError(f"分位数概率必须位于 [0, 1]: {probs}")
    seeds = spawn_seeds(model_spec.seed, nB) if seeds is None else [int(s) for s in seeds]
    if len(seeds) != nB:
        raise DataError(f"种子个数 {len(seeds)} 与重复次数 {nB} 不一致")
    bounds = block_boundaries(data.n, blocks)

    def replicate(seed):
        resampled = resample_blocks(data, draw_block_order(seed, blocks), bounds)
        try:
            return fit_model(resampled, model_spec, threads=1)
        except TvvarError as e:
            logger.warning(f"bootstrap重复样本 (种子 {seed}) 拟合失败, 跳过: {str(e)}")
            return None

    models = run_tasks(replicate, seeds, threads)
    failed = [seed for seed, model in zip(seeds, models) if model is None]
    fitted = [model for model in models if model is not None]
    if not fitted or len(failed) > config.BOOTSTRAP_MAX_FAILURE_RATE * nB:
        raise DataError(f"bootstrap失败的重复样本过多: {len(failed)} / {nB}")

    samples = np.stack([model.coeffs for model in fitted], axis=-1)
    summary = np.moveaxis(np.quantile(samples, probs, axis=-1, method='linear'), 0, -1)
    logger.info(f"bootstrap完成: {len(fitted)} 个重复样本, {blocks} 个块, 失败 {len(failed)} 个")

    return BootstrapDistribution(
        samples=samples,
        seeds=[s for s, model in zip(seeds, models) if model is not None],
        blocks=blocks,
        probs=probs,
        quantiles=summary,
        est_points=fitted[0].est_points.copy(),
        labels=list(data.labels),
        lags=list(fitted[0].lags),
        failed_seeds=failed,
    )


def coefficient_name(labels: List[str], i: int, j: int, lag: int) -> str:
    return f"{labels[i]}<-{labels[j]}(t-{lag})"


def quantile_frame(distribution: BootstrapDistribution) -> pd.DataFrame:
    """分位数汇总的长表（coefficient, est_point, prob, value）"""
    labels = distribution.labels
    records = []
    p = len(labels)
    for i in range(p):
        for j in range(p):
            for l, lag in enumerate(distribution.lags):
                name = coefficient_name(labels, i, j, lag)
                for e, t_e in enumerate(distribution.est_points):
                    for k, prob in enumerate(distribution.probs):
                        records.append({
                            'coefficient': name,
                            'response': labels[i],
                            'predictor': labels[j],
                            'lag': lag,
                            'est_point': float(t_e),
                            'prob': prob,
                            'value': float(distribution.quantiles[i, j, l, e, k]),
                        })
    return pd.DataFrame.from_records(records)


def _row_weights(times: np.ndarray, est_points: np.ndarray, bandwidth: float) -> np.ndarray:
    """rows×E 的高斯核权重（峰值为1，未归一化）"""
    return np.exp(-np.square(times[:, None] - est_points[None, :]) / (2.0 * bandwidth ** 2))


def prediction_bandwidth(model: TimeVaryingVarModel) -> float:
    """组合各估计点预测时使用的带宽；非核方法使用估计点间距"""
    if model.bandwidth is not None:
        return float(model.bandwidth)
    if model.n_est > 1:
        return 1.0 / (model.n_est - 1)
    return 1.0


def compute_prediction_errors(model: TimeVaryingVarModel, data: TimeSeriesDataset,
                              method: str = 'weighted') -> PredictionErrorReport:
    """
    节点预测误差

    每个设计行由各估计点的局部模型分别预测；weighted按估计时的核权重（逐行归一化）组合，
    closest取最近的估计点。R2与RMSE在模型的标准化尺度上计算。
    """
    if method not in PREDICTION_METHODS:
        raise DataError(f"未知的组合方式: {method} (可选: {', '.join(PREDICTION_METHODS)})")
    if data.p != model.p or list(data.labels) != list(model.labels):
        raise DataError(f"数据变量 {data.labels} 与模型变量 {model.labels} 不一致")

    design = build_lagged_design(data, model.lags)
    if model.scaling is not None:
        design = apply_scaling(design, model.scaling)

    times = design.response_times
    y = design.responses
    slice_predictions = model.slice_predictions(design.predictors)
    bandwidth = prediction_bandwidth(model)
    kernel = _row_weights(times, model.est_points, bandwidth)

    closest = np.argmin(np.abs(times[:, None] - model.est_points[None, :]), axis=1)
    if method == 'weighted':
        totals = kernel.sum(axis=1)
        weights = np.zeros_like(kernel)
        ok = totals > 0
        weights[ok] = kernel[ok] / totals[ok, None]
        # 权重下溢时退回最近估计点
        weights[~ok, closest[~ok]] = 1.0
        prediction = np.einsum('re,rep->rp', weights, slice_predictions)
    else:
        prediction = slice_predictions[np.arange(len(times)), closest]

    residual = y - prediction
    ss_res = np.sum(residual ** 2, axis=0)
    ss_tot = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
    constant = np.flatnonzero(~(ss_tot > 0))
    if len(constant):
        raise DataError(f"响应变量为常数, R2无定义: {', '.join(model.labels[i] for i in constant)}")

    rmse = np.sqrt(ss_res / len(times))
    r2 = 1.0 - ss_res / ss_tot

    # 每个估计点的核加权误差
    with np.errstate(invalid='ignore', divide='ignore'):
        w_sum = kernel.sum(axis=0)
        tv_mse = (kernel.T @ residual ** 2) / w_sum[:, None]
        local_mean = (kernel.T @ y) / w_sum[:, None]
        tv_tot = np.einsum('re,rep->ep', kernel, (y[:, None, :] - local_mean[None, :, :]) ** 2)
        tv_r2 = 1.0 - (kernel.T @ residual ** 2) / tv_tot

    return PredictionErrorReport(
        labels=list(model.labels),
        rmse=rmse,
        r2=r2,
        tv_rmse=np.sqrt(tv_mse).T,
        tv_r2=tv_r2.T,
        est_points=model.est_points.copy(),
        method=method,
    )


def prediction_frame(reports: List[PredictionErrorReport]) -> pd.DataFrame:
    """一个或多个组合方式的预测误差表（Variable, method, RMSE, R2）"""
    records = []
    for report in reports:
        for row in report.table_rows():
            records.append({'Variable': row['Variable'], 'method': report.method,
                            'RMSE': row['RMSE'], 'R2': row['R2']})
    return pd.DataFrame.from_records(records)
