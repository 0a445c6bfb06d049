# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 绘图服务
以matplotlib（Agg后端）输出SVG：系数轨迹、系数热图、误差-样本量曲线、灵敏度/精确度曲线
"""

import os
import logging
from typing import Optional

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from models import EvaluationReport, TimeVaryingVarModel

logger = logging.getLogger(__name__)

# 固定SVG内部id，使重复运行字节一致
plt.rcParams['svg.hashsalt'] = 'tvvar'
plt.rcParams['svg.fonttype'] = 'none'


def _save_svg(fig, file_path: str) -> str:
    directory = os.path.dirname(file_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    fig.savefig(file_path, format='svg', metadata={'Date': None})
    plt.close(fig)
    logger.info(f"SVG已保存: {file_path}")
    return file_path


def plot_trajectories(model: TimeVaryingVarModel, file_path: str, lag_index: int = 0) -> str:
    """每个响应变量一个子图，画出其全部滞后效应随估计点的轨迹"""
    p = model.p
    lag = model.lags[lag_index]
    fig, axes = plt.subplots(p, 1, figsize=(6, 1.8 * p), sharex=True, squeeze=False)
    for i in range(p):
        ax = axes[i, 0]
        for j in range(p):
            ax.plot(model.est_points, model.coeffs[i, j, lag_index], marker='.', linewidth=1,
                    label=f"{model.labels[j]}(t-{lag})")
        ax.axhline(0.0, color='grey', linewidth=0.5)
        ax.set_ylabel(model.labels[i])
    axes[-1, 0].set_xlabel('time (normalized)')
    axes[0, 0].set_title(f"{model.method} lagged effects")
    axes[0, 0].legend(fontsize='x-small', ncol=min(p, 4), loc='upper right')
    fig.tight_layout()
    return _save_svg(fig, file_path)


def plot_heatmap(model: TimeVaryingVarModel, file_path: str, est_index: Optional[int] = None,
                 lag_index: int = 0) -> str:
    """某一估计点的系数矩阵热图（行为响应，列为预测变量）"""
    est_index = model.n_est // 2 if est_index is None else est_index
    matrix = model.coeffs[:, :, lag_index, est_index]
    limit = float(np.max(np.abs(matrix))) or 1.0
    fig, ax = plt.subplots(figsize=(5, 4.5))
    image = ax.imshow(matrix, cmap='RdBu_r', vmin=-limit, vmax=limit)
    ax.set_xticks(range(model.p))
    ax.set_xticklabels(model.labels, rotation=90)
    ax.set_yticks(range(model.p))
    ax.set_yticklabels(model.labels)
    ax.set_title(f"{model.method}, t = {model.est_points[est_index]:.3f}")
    fig.colorbar(image, ax=ax)
    fig.tight_layout()
    return _save_svg(fig, file_path)


def plot_error_by_n(report: EvaluationReport, file_path: str) -> str:
    """每个参数类别一个子图：各方法平均绝对误差随n的变化（对数横轴），有分位数时画出区间带"""
    frame = pd.DataFrame.from_records(report.rows)
    kinds = list(dict.fromkeys(frame['kind']))
    fig, axes = plt.subplots(1, len(kinds), figsize=(3.2 * len(kinds), 3.2), sharey=True, squeeze=False)
    for ax, kind in zip(axes[0], kinds):
        subset = frame[frame['kind'] == kind]
        for method in dict.fromkeys(subset['method']):
            rows = subset[subset['method'] == method]
            means = rows[rows['stat'] == 'mean'].sort_values('n')
            line, = ax.plot(means['n'], means['value'], marker='o', linewidth=1, label=method)
            quantiles = rows[rows['stat'] == 'quantile']
            probs = sorted(quantiles['prob'].dropna().unique())
            if len(probs) >= 2:
                low = quantiles[quantiles['prob'] == probs[0]].sort_values('n')
                high = quantiles[quantiles['prob'] == probs[-1]].sort_values('n')
                ax.fill_between(low['n'], low['value'], high['value'], color=line.get_color(), alpha=0.15)
        ax.set_xscale('log')
        ax.set_title(kind)
        ax.set_xlabel('n (log scale)')
    axes[0, 0].set_ylabel('absolute error')
    axes[0, -1].legend(fontsize='small')
    fig.tight_layout()
    return _save_svg(fig, file_path)


def plot_recovery(report: EvaluationReport, file_path: str) -> str:
    """灵敏度与精确度随n的变化（对数横轴）"""
    frame = pd.DataFrame.from_records(report.recovery)
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.2), sharey=True)
    for ax, column in zip(axes, ['sensitivity', 'precision']):
        for method in dict.fromkeys(frame['method']):
            rows = frame[frame['method'] == method].sort_values('n')
            values = pd.to_numeric(rows[column], errors='coerce')
            ax.plot(rows['n'], values, marker='o', linewidth=1,
                    linestyle='--' if bool(rows['dense'].iloc[0]) else '-', label=method)
        ax.set_xscale('log')
        ax.set_ylim(0, 1.05)
        ax.set_title(column)
        ax.set_xlabel('n (log scale)')
    axes[-1].legend(fontsize='small')
    fig.tight_layout()
    return _save_svg(fig, file_path)


def plot_bandwidth_errors(candidates: np.ndarray, errors: np.ndarray, file_path: str) -> str:
    """带宽选择的误差曲线"""
    order = np.argsort(candidates)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.asarray(candidates)[order], np.asarray(errors)[order], marker='o', linewidth=1)
    ax.set_xlabel('bandwidth')
    ax.set_ylabel('mean absolute prediction error')
    fig.tight_layout()
    return _save_svg(fig, file_path)
