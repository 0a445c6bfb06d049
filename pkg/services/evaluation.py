# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 评估服务
按参数函数类型汇总绝对估计误差（均值与分位数），以及结构恢复的灵敏度与精确度
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from models import (CoefficientArray, EvaluationReport, TimeVaryingVarModel,
                    DENSE_METHODS, KIND_GROUPS)
from utils.errors import DataError

logger = logging.getLogger(__name__)

GROUP_ORDER = ['constant', 'linear', 'sigmoid', 'step', 'zero']


def absolute_error(model: TimeVaryingVarModel, truth: CoefficientArray) -> np.ndarray:
    """
    生成尺度上的逐系数逐估计点绝对误差，返回 p×p×E；真值线性插值到估计点
    """
    if list(model.lags) != [1]:
        raise DataError(f"只能与一阶真值比较, 模型滞后阶为 {model.lags}")
    if model.p != truth.p:
        raise DataError(f"模型变量数 {model.p} 与真值变量数 {truth.p} 不一致")
    estimate = model.unscaled().coeffs[:, :, 0, :]
    return np.abs(estimate - truth.evaluate_at(model.est_points))


def _group_of(kind: str) -> str:
    return KIND_GROUPS[kind]


def _pool(records: Sequence[Tuple[np.ndarray, np.ndarray]], group: str) -> np.ndarray:
    """把所有迭代中属于group的参数误差汇成 参数×E 的矩阵"""
    parts = []
    for errors, kinds in records:
        mask = np.vectorize(_group_of, otypes=[object])(kinds) == group
        parts.append(errors[mask])
    return np.concatenate(parts, axis=0) if parts else np.empty((0, 0))


def aggregate_errors(records: Sequence[Tuple[np.ndarray, np.ndarray]], probs: Sequence[float] = (),
                     method: str = '', n: int = 0, kinds: Optional[Sequence[str]] = None) -> EvaluationReport:
    """
    汇总多次迭代的绝对误差（对称的上升/下降类型合并为同一类别）

    Args:
        records: 每次迭代的 (p×p×E 误差, p×p 函数类型)
        probs: 分位数概率；分位数在每个估计点上跨参数与迭代计算，再对时间取平均
        method: 方法标签
        n: 样本量
        kinds: 需要汇总的合并类别，None时为出现过的全部类别

    Raises:
        DataError: 没有迭代记录，或指定的类别没有任何参数
    """
    if not records:
        raise DataError("没有可汇总的迭代结果")
    present = {_group_of(kind) for _, specs in records for kind in np.asarray(specs).ravel()}
    groups = [g for g in GROUP_ORDER if g in present] if kinds is None else list(kinds)

    report = EvaluationReport(iterations={f"{method}/{n}": len(records)})
    for group in groups:
        pooled = _pool(records, group)
        if pooled.size == 0:
            raise DataError(f"类别 {group} 没有任何参数")
        report.rows.append({'method': method, 'n': n, 'kind': group, 'stat': 'mean',
                            'prob': None, 'value': float(pooled.mean())})
        for prob in probs:
            per_time = np.quantile(pooled, prob, axis=0)
            report.rows.append({'method': method, 'n': n, 'kind': group, 'stat': 'quantile',
                                'prob': float(prob), 'value': float(per_time.mean())})
        means = pooled.mean(axis=0)
        for e in range(pooled.shape[1]):
            report.over_time.append({'method': method, 'n': n, 'kind': group, 'est_index': e,
                                     'stat': 'mean', 'prob': None, 'value': float(means[e])})
            for prob in probs:
                report.over_time.append({'method': method, 'n': n, 'kind': group, 'est_index': e,
                                         'stat': 'quantile', 'prob': float(prob),
                                         'value': float(np.quantile(pooled[:, e], prob))})
    return report


@dataclass
class StructureRecovery:
    """结构恢复结果；precision在没有非零估计时无定义（None）"""
    sensitivity: float
    precision: Optional[float]
    true_positive: int
    false_positive: int
    false_negative: int
    dense: bool = False

    @property
    def precision_defined(self) -> bool:
        return self.precision is not None

    def as_tuple(self) -> Tuple[float, Optional[float]]:
        return self.sensitivity, self.precision


def structure_recovery(model: TimeVaryingVarModel, truth: CoefficientArray, zero_tol: float = 0.0) -> StructureRecovery:
    """
    灵敏度 TP/(TP+FN) 与精确度 TP/(TP+FP)

    估计在任一估计点上 |值| > zero_tol 即视为非零；真值参数的函数类型不是zero即视为非零。
    """
    if model.p != truth.p:
        raise DataError(f"模型变量数 {model.p} 与真值变量数 {truth.p} 不一致")
    estimate = model.unscaled().coeffs[:, :, 0, :]
    estimated = np.any(np.abs(estimate) > zero_tol, axis=-1)
    actual = truth.nonzero_mask()

    tp = int(np.sum(estimated & actual))
    fp = int(np.sum(estimated & ~actual))
    fn = int(np.sum(~estimated & actual))
    sensitivity = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else None
    return StructureRecovery(sensitivity=sensitivity, precision=precision, true_positive=tp,
                             false_positive=fp, false_negative=fn, dense=model.method in DENSE_METHODS)


class EvaluationCollector:
    """按 (方法, n) 累积多次迭代的误差与结构恢复结果"""

    def __init__(self, probs: Sequence[float] = (0.25, 0.75), zero_tol: float = 0.0):
        self.probs = list(probs)
        self.zero_tol = zero_tol
        self._errors: Dict[Tuple[str, int], List[Tuple[np.ndarray, np.ndarray]]] = {}
        self._recovery: Dict[Tuple[str, int], List[StructureRecovery]] = {}

    def add(self, method: str, n: int, model: TimeVaryingVarModel, truth: CoefficientArray):
        key = (method, int(n))
        self._errors.setdefault(key, []).append((absolute_error(model, truth), truth.specs))
        self._recovery.setdefault(key, []).append(structure_recovery(model, truth, self.zero_tol))

    def __len__(self) -> int:
        return sum(len(records) for records in self._errors.values())

    def report(self) -> EvaluationReport:
        if not self._errors:
            raise DataError("评估收集器为空")
        combined = EvaluationReport()
        for (method, n), records in sorted(self._errors.items(), key=lambda item: (item[0][0], item[0][1])):
            part = aggregate_errors(records, self.probs, method, n)
            combined.rows.extend(part.rows)
            combined.over_time.extend(part.over_time)
            combined.iterations.update(part.iterations)

            recoveries = self._recovery[(method, n)]
            defined = [r.precision for r in recoveries if r.precision_defined]
            combined.recovery.append({
                'method': method,
                'n': n,
                'sensitivity': float(np.mean([r.sensitivity for r in recoveries])),
                'precision': float(np.mean(defined)) if defined else None,
                'precision_defined': len(defined),
                'dense': method in DENSE_METHODS,
            })
        return combined


def report_frame(report: EvaluationReport) -> pd.DataFrame:
    """长表 (method, n, kind, stat, prob, value)"""
    return pd.DataFrame.from_records(report.rows, columns=['method', 'n', 'kind', 'stat', 'prob', 'value'])


def recovery_frame(report: EvaluationReport) -> pd.DataFrame:
    return pd.DataFrame.from_records(
        report.recovery, columns=['method', 'n', 'sensitivity', 'precision', 'precision_defined', 'dense'])


def over_time_frame(report: EvaluationReport) -> pd.DataFrame:
    return pd.DataFrame.from_records(
        report.over_time, columns=['method', 'n', 'kind', 'est_index', 'stat', 'prob', 'value'])


def summarize_report(report: EvaluationReport) -> List[Dict[str, Any]]:
    """每个 (方法, n, 类别) 一行的均值摘要，供命令行打印"""
    return [row for row in report.rows if row['stat'] == 'mean']
