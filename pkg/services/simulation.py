# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 仿真服务
生成真值时变VAR模型（随机图结构或上三角结构，八种参数函数形状，平稳性重抽）与仿真数据
"""

import logging
from typing import Any, Dict, Optional

import numpy as np

from config import config
from models import (CoefficientArray, ParameterFunctionSpec, TimeSeriesDataset, NONZERO_KINDS)
from utils.errors import ConfigError, DataError, NumericalError
from utils.parallel import spawn_seeds

logger = logging.getLogger(__name__)

STRUCTURE_RANDOM = 'random'
STRUCTURE_UPPER = 'upper_triangular'

# 数值溢出保护阈值
OVERFLOW_LIMIT = 1e6


def generate_graph_structure(p: int = 10, n_edges: int = 26, seed: Optional[int] = None) -> np.ndarray:
    """
    随机图结构：对角线全为1（所有自回归效应非零），在p²−p个非对角位置中不放回均匀抽取n_edges个置1
    """
    if p < 1:
        raise DataError(f"变量数必须为正整数: {p}")
    off_diagonal = np.flatnonzero(~np.eye(p, dtype=bool))
    if not 0 <= n_edges <= len(off_diagonal):
        raise DataError(f"边数 {n_edges} 超出范围 [0, {len(off_diagonal)}]")
    structure = np.eye(p, dtype=np.int64)
    chosen = np.random.default_rng(seed).choice(off_diagonal, size=n_edges, replace=False)
    structure.flat[chosen] = 1
    return structure


def upper_triangular_structure(p: int = 20) -> np.ndarray:
    """上三角结构：[i, j] = 1 当且仅当 j ≥ i，各入度值1..p恰好各出现一次"""
    if p < 1:
        raise DataError(f"变量数必须为正整数: {p}")
    return np.triu(np.ones((p, p), dtype=np.int64))


def assign_parameter_functions(structure: np.ndarray, theta: float = None, seed: Optional[int] = None,
                               steepness: float = None) -> np.ndarray:
    """
    为结构中每个非零位置均匀随机指定七种非零函数形状之一，零位置指定为zero

    Returns:
        np.ndarray: p×p 的 ParameterFunctionSpec 对象数组
    """
    theta = config.SIM_THETA if theta is None else theta
    steepness = config.SIM_SIGMOID_STEEPNESS if steepness is None else steepness
    structure = np.asarray(structure)
    draws = np.random.default_rng(seed).integers(0, len(NONZERO_KINDS), size=structure.shape)
    specs = np.empty(structure.shape, dtype=object)
    for index in np.ndindex(structure.shape):
        kind = NONZERO_KINDS[draws[index]] if structure[index] else 'zero'
        specs[index] = ParameterFunctionSpec(kind=kind, theta=theta, steepness=steepness)
    return specs


def _kinds(specs: np.ndarray) -> np.ndarray:
    kinds = np.empty(specs.shape, dtype=object)
    for index in np.ndindex(specs.shape):
        spec = specs[index]
        kinds[index] = spec.kind if isinstance(spec, ParameterFunctionSpec) else str(spec)
    return kinds


def _render_values(specs: np.ndarray, n: int) -> np.ndarray:
    grid = np.arange(1, n + 1) / n
    p = specs.shape[0]
    values = np.zeros((p, p, n))
    for i in range(p):
        for j in range(p):
            values[i, j] = specs[i, j].evaluate(grid)
    return values


def spectral_radii(values: np.ndarray) -> np.ndarray:
    """每个时间切片 B[:, :, t] 的谱半径"""
    return np.abs(np.linalg.eigvals(np.moveaxis(values, -1, 0))).max(axis=1)


def _draw_specs(p: int, n_edges: Optional[int], structure: str, theta: float, steepness: float,
                seed: Optional[int]) -> np.ndarray:
    structure_seed, assign_seed = spawn_seeds(seed, 2)
    if structure == STRUCTURE_RANDOM:
        graph = generate_graph_structure(p, n_edges, structure_seed)
    elif structure == STRUCTURE_UPPER:
        graph = upper_triangular_structure(p)
    else:
        raise ConfigError(f"未知的结构类型: {structure}")
    return assign_parameter_functions(graph, theta, assign_seed, steepness)


def render_coefficient_array(specs: np.ndarray, n: int, theta: float = None, seed: Optional[int] = None,
                             sigma: float = None, structure: str = STRUCTURE_RANDOM,
                             max_redraws: int = None) -> CoefficientArray:
    """
    在时间网格 t_k = k/n (k = 1..n) 上生成真值系数阵

    任一时间切片谱半径 ≥ 1 时，按新的种子流整体重抽结构与函数指定，直到所有切片平稳。

    Raises:
        ConfigError: 连续 max_redraws 次重抽都不平稳
    """
    if n < 2:
        raise DataError(f"时间序列长度至少为2: {n}")
    specs = np.asarray(specs, dtype=object)
    theta = specs.flat[0].theta if theta is None else theta
    steepness = specs.flat[0].steepness
    sigma = float(np.sqrt(config.SIM_NOISE_VARIANCE)) if sigma is None else float(sigma)
    max_redraws = config.SIM_MAX_REDRAWS if max_redraws is None else max_redraws
    p = specs.shape[0]
    mask = _kinds(specs) != 'zero'
    n_edges = int(mask.sum() - np.trace(mask))
    redraw_seeds = spawn_seeds(seed, max_redraws) if max_redraws else []

    for redraws in range(max_redraws + 1):
        values = _render_values(specs, n)
        if spectral_radii(values).max() < 1:
            if redraws:
                logger.info(f"真值系数阵经 {redraws} 次重抽后平稳")
            return CoefficientArray(
                values=values,
                specs=_kinds(specs),
                theta=float(theta),
                sigma=sigma,
                seed=seed,
                redraws=redraws,
                structure=structure,
                n_edges=n_edges if structure == STRUCTURE_RANDOM else None,
            )
        if redraws < max_redraws:
            specs = _draw_specs(p, n_edges, structure, theta, steepness, redraw_seeds[redraws])

    raise ConfigError(f"连续 {max_redraws} 次重抽均无法得到平稳的VAR模型, 请检查 θ 与结构设置")


def generate_truth(p: int = 10, n: int = 530, n_edges: Optional[int] = 26, structure: str = STRUCTURE_RANDOM,
                   theta: float = None, sigma: float = None, seed: Optional[int] = None,
                   steepness: float = None) -> CoefficientArray:
    """抽取结构与函数指定并生成平稳的真值系数阵"""
    theta = config.SIM_THETA if theta is None else theta
    steepness = config.SIM_SIGMOID_STEEPNESS if steepness is None else steepness
    draw_seed, render_seed = spawn_seeds(seed, 2)
    specs = _draw_specs(p, n_edges, structure, theta, steepness, draw_seed)
    truth = render_coefficient_array(specs, n, theta, render_seed, sigma, structure)
    truth.seed = seed
    return truth


def preset_truth(preset: str, n: int, seed: Optional[int] = None, theta: float = None,
                 sigma: float = None) -> CoefficientArray:
    """按命名预设（sim-a 随机图 p=10；sim-b 上三角 p=20）生成真值"""
    if preset not in config.SIM_PRESETS:
        raise ConfigError(f"未知的仿真预设: {preset} (可选: {', '.join(config.SIM_PRESETS)})")
    settings = config.SIM_PRESETS[preset]
    return generate_truth(p=settings['p'], n=n, n_edges=settings['n_edges'], structure=settings['structure'],
                          theta=theta, sigma=sigma, seed=seed)


def simulate_tv_var(coeffs: CoefficientArray, sigma: float = None, seed: Optional[int] = None) -> TimeSeriesDataset:
    """
    按 X_t = B_t X_{t−1} + ε_t（截距为0，ε_t ~ N(0, σ²I)）生成数据，X₁为纯噪声
    """
    sigma = coeffs.sigma if sigma is None else float(sigma)
    if not sigma > 0:
        raise DataError(f"噪声标准差必须为正数: {sigma}")
    rng = np.random.default_rng(seed)
    p, n = coeffs.p, coeffs.n
    noise = rng.normal(0.0, sigma, size=(n, p))
    values = np.empty((n, p))
    values[0] = noise[0]
    for t in range(1, n):
        values[t] = coeffs.values[:, :, t] @ values[t - 1] + noise[t]
        if not np.all(np.abs(values[t]) < OVERFLOW_LIMIT):
            raise NumericalError(f"仿真序列在第 {t + 1} 个时点发散, 真值系数阵可能不平稳")

    return TimeSeriesDataset(
        values=values,
        labels=[f"V{j + 1}" for j in range(p)],
        time_norm=coeffs.time_grid(),
    )


def structure_summary(structure) -> Dict[str, Any]:
    """
    结构摘要：非对角边数、边密度、经验平均入度（含自回归效应）与各变量入度
    """
    if isinstance(structure, CoefficientArray):
        mask = structure.nonzero_mask()
    else:
        mask = np.asarray(structure) != 0
    p = mask.shape[0]
    n_edges = int(mask.sum() - np.trace(mask))
    possible = p * p - p
    indegree = mask.sum(axis=1)
    return {
        'p': p,
        'n_edges': n_edges,
        'n_nonzero': int(mask.sum()),
        'density': n_edges / possible if possible else 0.0,
        'mean_indegree': float(indegree.mean()),
        'indegree': [int(v) for v in indegree],
    }
