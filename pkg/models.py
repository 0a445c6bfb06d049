# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 数据模型
定义系统中使用的数据结构，所有模型均支持to_dict/from_dict以便JSON存储
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Any

import numpy as np

from utils.errors import DataError

# 方法标签
METHOD_GLM = 'GLM'
METHOD_GLM_L1 = 'GLM-L1'
METHOD_KS = 'KS'
METHOD_KS_L1 = 'KS-L1'
METHOD_GAM = 'GAM'
METHOD_GAM_ST = 'GAM-st'

ALL_METHODS = [METHOD_GLM, METHOD_GLM_L1, METHOD_KS, METHOD_KS_L1, METHOD_GAM, METHOD_GAM_ST]

# 不产生精确零估计的方法（不适合结构估计）
DENSE_METHODS = {METHOD_GLM, METHOD_KS, METHOD_GAM}

# 命令行方法名 -> 方法标签
METHOD_ALIASES = {
    'glm': METHOD_GLM,
    'glm-l1': METHOD_GLM_L1,
    'ks': METHOD_KS,
    'ks-l1': METHOD_KS_L1,
    'gam': METHOD_GAM,
    'gam-st': METHOD_GAM_ST,
}

# 参数函数类型
PARAMETER_KINDS = [
    'constant_nonzero', 'linear_up', 'linear_down', 'sigmoid_up',
    'sigmoid_down', 'step_up', 'step_down', 'zero'
]
NONZERO_KINDS = PARAMETER_KINDS[:-1]

# 对称的上升/下降类型合并后的类别
KIND_GROUPS = {
    'constant_nonzero': 'constant',
    'linear_up': 'linear',
    'linear_down': 'linear',
    'sigmoid_up': 'sigmoid',
    'sigmoid_down': 'sigmoid',
    'step_up': 'step',
    'step_down': 'step',
    'zero': 'zero',
}


def _to_list(array: Optional[np.ndarray]):
    """数组转嵌套列表（None保持None）"""
    if array is None:
        return None
    return np.asarray(array).tolist()


def _to_array(value, dtype=float) -> Optional[np.ndarray]:
    if value is None:
        return None
    return np.asarray(value, dtype=dtype)


@dataclass
class TimeSeriesDataset:
    """原始多变量时间序列（行为测量时点，列为变量，缺失记为NaN）"""
    values: np.ndarray
    labels: List[str]
    time_norm: Optional[np.ndarray] = None
    beep: Optional[np.ndarray] = None
    day: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2:
            raise DataError("数据必须是 n×p 矩阵")
        n, p = self.values.shape
        if n < 2 or p < 1:
            raise DataError(f"数据至少需要2行1列, 实际为 {n}×{p}")
        if np.isinf(self.values).any():
            raise DataError("数据中存在无穷值")

        self.labels = [str(label) for label in self.labels]
        if len(self.labels) != p:
            raise DataError(f"变量名数量({len(self.labels)})与列数({p})不一致")

        if self.time_norm is not None:
            self.time_norm = np.asarray(self.time_norm, dtype=float)
            if self.time_norm.shape != (n,):
                raise DataError("time_norm 长度必须等于行数")
            if not np.all(np.isfinite(self.time_norm)):
                raise DataError("time_norm 不能含缺失值")
            if self.time_norm.min() < 0 or self.time_norm.max() > 1:
                raise DataError("time_norm 必须位于 [0, 1] 内")
            if np.any(np.diff(self.time_norm) < 0):
                raise DataError("time_norm 必须单调不减")

        if (self.beep is None) != (self.day is None):
            raise DataError("beep 与 day 必须同时提供或同时缺省")
        if self.beep is not None:
            self.beep = self._check_markers(self.beep, 'beep', n)
            self.day = self._check_markers(self.day, 'day', n)

    @staticmethod
    def _check_markers(markers, name: str, n: int) -> np.ndarray:
        array = np.asarray(markers, dtype=float)
        if array.shape != (n,):
            raise DataError(f"{name} 长度必须等于行数")
        if not np.all(np.isfinite(array)) or np.any(array != np.round(array)) or np.any(array < 1):
            raise DataError(f"{name} 必须全部为正整数")
        return array.astype(np.int64)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def has_markers(self) -> bool:
        return self.beep is not None

    def timestamps(self) -> np.ndarray:
        """返回归一化时间戳；未提供时在原始n个时点上于[0,1]等距合成"""
        if self.time_norm is not None:
            return self.time_norm
        return np.linspace(0.0, 1.0, self.n)

    def missing_rows(self) -> np.ndarray:
        return np.isnan(self.values).any(axis=1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'values': [[None if np.isnan(v) else float(v) for v in row] for row in self.values],
            'labels': list(self.labels),
            'time_norm': _to_list(self.time_norm),
            'beep': _to_list(self.beep),
            'day': _to_list(self.day),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TimeSeriesDataset':
        values = np.array([[np.nan if v is None else v for v in row] for row in data['values']], dtype=float)
        return cls(
            values=values,
            labels=data['labels'],
            time_norm=_to_array(data.get('time_norm')),
            beep=_to_array(data.get('beep'), dtype=np.int64),
            day=_to_array(data.get('day'), dtype=np.int64),
        )

    def __str__(self) -> str:
        return f"TimeSeriesDataset(n={self.n}, p={self.p}, markers={self.has_markers})"


@dataclass
class DesignScaling:
    """标准化参数（预测变量列与响应变量列分别记录均值和标准差）"""
    predictor_mean: np.ndarray
    predictor_sd: np.ndarray
    response_mean: np.ndarray
    response_sd: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {
            'predictor_mean': _to_list(self.predictor_mean),
            'predictor_sd': _to_list(self.predictor_sd),
            'response_mean': _to_list(self.response_mean),
            'response_sd': _to_list(self.response_sd),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DesignScaling':
        return cls(**{key: _to_array(data[key]) for key in
                      ('predictor_mean', 'predictor_sd', 'response_mean', 'response_sd')})


@dataclass
class LaggedDesign:
    """
    VAR设计矩阵：每一行是一对 (t−lag, t) 观测

    predictors的列按滞后阶优先排列：第 l 个滞后阶的第 j 个变量位于列 l*p + j
    """
    predictors: np.ndarray
    responses: np.ndarray
    response_times: np.ndarray
    included_rows: int
    total_rows: int
    lags: List[int]
    labels: List[str]
    row_index: np.ndarray
    scaling: Optional[DesignScaling] = None

    @property
    def p(self) -> int:
        return self.responses.shape[1]

    @property
    def q(self) -> int:
        return self.predictors.shape[1]

    @property
    def n_occasions(self) -> int:
        """原始时间序列长度"""
        return self.total_rows + max(self.lags)

    @property
    def is_standardized(self) -> bool:
        return self.scaling is not None

    def summary_line(self) -> str:
        return f"Rows included in VAR design matrix: {self.included_rows} / {self.total_rows}"


@dataclass
class KernelWeights:
    """某估计点处的高斯核权重"""
    est_point: float
    bandwidth: float
    weights: np.ndarray
    n_util: float


@dataclass
class RegressionProblem:
    """加权回归问题（截距从不惩罚）"""
    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    penalize_intercept: bool = False

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        m = self.X.shape[0]
        if m < 1:
            raise DataError("回归问题至少需要1行")
        if self.y.shape != (m,) or self.w.shape != (m,):
            raise DataError(f"维度不一致: X {self.X.shape}, y {self.y.shape}, w {self.w.shape}")
        if np.any(self.w < 0) or not np.any(self.w > 0):
            raise DataError("观测权重必须非负且不能全为0")
        if self.penalize_intercept:
            raise DataError("截距不参与惩罚")

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return self.X.shape[1]


@dataclass
class RegressionSolution:
    """回归解"""
    intercept: float
    slopes: np.ndarray
    lam: float
    objective: float
    sweeps: int = 0


@dataclass
class VarCoefficients:
    """某一时点的VAR系数：coeffs[i, j, l] 为 X_{t-lag_l, j} 对 X_{t, i} 的效应"""
    intercepts: np.ndarray
    coeffs: np.ndarray
    lags: List[int]
    labels: List[str]
    lambdas: Optional[np.ndarray] = None
    scaling: Optional[DesignScaling] = None

    @property
    def p(self) -> int:
        return self.intercepts.shape[0]

    def predict(self, lagged: np.ndarray) -> np.ndarray:
        """lagged为按滞后阶优先排列的预测变量行（或矩阵）"""
        flat = self.coeffs.transpose(0, 2, 1).reshape(self.p, -1)
        return np.atleast_2d(lagged) @ flat.T + self.intercepts


@dataclass
class TimeVaryingVarModel:
    """
    时变VAR模型：每个估计点一组截距与系数

    intercepts: p×E；coeffs: p×p×L×E；lambdas: p×E（仅正则化方法）
    """
    est_points: np.ndarray
    intercepts: np.ndarray
    coeffs: np.ndarray
    method: str
    lags: List[int]
    labels: List[str]
    bandwidth: Optional[float] = None
    lambdas: Optional[np.ndarray] = None
    scaling: Optional[DesignScaling] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    spec: Dict[str, Any] = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.intercepts.shape[0]

    @property
    def n_est(self) -> int:
        return len(self.est_points)

    def slice(self, e: int) -> VarCoefficients:
        return VarCoefficients(
            intercepts=self.intercepts[:, e].copy(),
            coeffs=self.coeffs[:, :, :, e].copy(),
            lags=list(self.lags),
            labels=list(self.labels),
            lambdas=None if self.lambdas is None else self.lambdas[:, e].copy(),
            scaling=self.scaling,
        )

    def slice_predictions(self, lagged: np.ndarray) -> np.ndarray:
        """每个估计点模型对每行的预测，返回 rows×E×p"""
        lagged = np.atleast_2d(lagged)
        p, _, n_lags, n_est = self.coeffs.shape
        flat = self.coeffs.transpose(3, 0, 2, 1).reshape(n_est, p, n_lags * p)
        return np.einsum('rq,epq->rep', lagged, flat) + self.intercepts.T[None, :, :]

    def unscaled(self) -> 'TimeVaryingVarModel':
        """把标准化尺度上的估计换算回原始数据尺度"""
        if self.scaling is None:
            return self
        s = self.scaling
        p, _, n_lags, n_est = self.coeffs.shape
        x_mean = s.predictor_mean.reshape(n_lags, p)
        x_sd = s.predictor_sd.reshape(n_lags, p)
        # coeffs[i, j, l]：响应 i，变量 j，滞后 l
        ratio = s.response_sd[:, None, None] / x_sd.T[None, :, :]
        coeffs = self.coeffs * ratio[..., None]
        shift = np.einsum('ijle,jl->ie', coeffs, x_mean.T)
        intercepts = s.response_mean[:, None] + s.response_sd[:, None] * self.intercepts - shift
        return TimeVaryingVarModel(
            est_points=self.est_points.copy(),
            intercepts=intercepts,
            coeffs=coeffs,
            method=self.method,
            lags=list(self.lags),
            labels=list(self.labels),
            bandwidth=self.bandwidth,
            lambdas=self.lambdas,
            scaling=None,
            diagnostics=self.diagnostics,
            spec=self.spec,
        )

    def to_dict(self) -> Dict[str, Any]:
        diagnostics = {}
        for key, value in self.diagnostics.items():
            diagnostics[key] = _to_list(value) if isinstance(value, np.ndarray) else value
        return {
            'method': self.method,
            'bandwidth': self.bandwidth,
            'est_points': _to_list(self.est_points),
            'labels': list(self.labels),
            'lags': list(self.lags),
            'scaling': None if self.scaling is None else self.scaling.to_dict(),
            'intercepts': _to_list(self.intercepts),
            'coeffs': _to_list(self.coeffs),
            'lambdas': _to_list(self.lambdas),
            'diagnostics': diagnostics,
            'spec': dict(self.spec),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TimeVaryingVarModel':
        diagnostics = {}
        for key, value in data.get('diagnostics', {}).items():
            diagnostics[key] = np.asarray(value, dtype=float) if isinstance(value, list) else value
        return cls(
            est_points=_to_array(data['est_points']),
            intercepts=_to_array(data['intercepts']),
            coeffs=_to_array(data['coeffs']),
            method=data['method'],
            lags=[int(lag) for lag in data['lags']],
            labels=list(data['labels']),
            bandwidth=data.get('bandwidth'),
            lambdas=_to_array(data.get('lambdas')),
            scaling=None if data.get('scaling') is None else DesignScaling.from_dict(data['scaling']),
            diagnostics=diagnostics,
            spec=dict(data.get('spec', {})),
        )

    def __str__(self) -> str:
        return f"TimeVaryingVarModel(method={self.method}, p={self.p}, E={self.n_est})"


@dataclass
class EstimationSpec:
    """完整的估计配置（bootstrap重抽样时按此配置重新拟合）"""
    method: str
    lags: List[int] = field(default_factory=lambda: [1])
    n_est_points: int = 20
    est_points: Optional[List[float]] = None
    bandwidth: Optional[float] = None
    k: Optional[int] = None
    k_max: int = 10
    level: float = 0.95
    standardize: bool = True
    folds: int = 10
    seed: int = 1

    def __post_init__(self):
        self.method = METHOD_ALIASES.get(self.method, self.method)
        if self.method not in ALL_METHODS:
            raise DataError(f"不支持的估计方法: {self.method}")

    def resolved_est_points(self) -> np.ndarray:
        if self.est_points is not None:
            return np.asarray(self.est_points, dtype=float)
        if self.n_est_points == 1:
            return np.array([0.5])
        return np.linspace(0.0, 1.0, self.n_est_points)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'method': self.method,
            'lags': list(self.lags),
            'n_est_points': self.n_est_points,
            'est_points': None if self.est_points is None else [float(t) for t in self.est_points],
            'bandwidth': self.bandwidth,
            'k': self.k,
            'k_max': self.k_max,
            'level': self.level,
            'standardize': self.standardize,
            'folds': self.folds,
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EstimationSpec':
        fields = ('method', 'lags', 'n_est_points', 'est_points', 'bandwidth', 'k',
                  'k_max', 'level', 'standardize', 'folds', 'seed')
        return cls(**{key: data[key] for key in fields if key in data})


@dataclass
class BootstrapDistribution:
    """块bootstrap抽样分布；samples形状 p×p×L×E×nB"""
    samples: np.ndarray
    seeds: List[int]
    blocks: int
    probs: List[float]
    quantiles: np.ndarray
    est_points: np.ndarray
    labels: List[str]
    lags: List[int]
    failed_seeds: List[int] = field(default_factory=list)

    @property
    def nB(self) -> int:
        return self.samples.shape[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'nB': self.nB,
            'blocks': self.blocks,
            'seeds': [int(s) for s in self.seeds],
            'failed_seeds': [int(s) for s in self.failed_seeds],
            'probs': [float(p) for p in self.probs],
            'est_points': _to_list(self.est_points),
            'labels': list(self.labels),
            'lags': list(self.lags),
            'samples': _to_list(self.samples),
            'quantiles': _to_list(self.quantiles),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'BootstrapDistribution':
        return cls(
            samples=_to_array(data['samples']),
            seeds=list(data['seeds']),
            blocks=int(data['blocks']),
            probs=list(data['probs']),
            quantiles=_to_array(data['quantiles']),
            est_points=_to_array(data['est_points']),
            labels=list(data['labels']),
            lags=list(data['lags']),
            failed_seeds=list(data.get('failed_seeds', [])),
        )


@dataclass
class PredictionErrorReport:
    """节点预测误差：合并全时段的R2/RMSE，以及每个估计点的加权误差"""
    labels: List[str]
    rmse: np.ndarray
    r2: np.ndarray
    tv_rmse: np.ndarray
    tv_r2: np.ndarray
    est_points: np.ndarray
    method: str

    def table_rows(self) -> List[Dict[str, Any]]:
        return [
            {'Variable': label, 'RMSE': float(self.rmse[i]), 'R2': float(self.r2[i])}
            for i, label in enumerate(self.labels)
        ]

    def format_table(self) -> str:
        """按教程表格格式输出，例如 'Down 0.825 0.297'"""
        width = max(len('Variable'), max(len(label) for label in self.labels))
        lines = [f"{'Variable':<{width}} {'RMSE':>6} {'R2':>6}"]
        for row in self.table_rows():
            lines.append(f"{row['Variable']:<{width}} {row['RMSE']:6.3f} {row['R2']:6.3f}")
        return '\n'.join(lines)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'method': self.method,
            'labels': list(self.labels),
            'rmse': _to_list(self.rmse),
            'r2': _to_list(self.r2),
            'est_points': _to_list(self.est_points),
            'tv_rmse': _to_list(self.tv_rmse),
            'tv_r2': _to_list(self.tv_r2),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PredictionErrorReport':
        return cls(
            labels=list(data['labels']),
            rmse=_to_array(data['rmse']),
            r2=_to_array(data['r2']),
            tv_rmse=_to_array(data['tv_rmse']),
            tv_r2=_to_array(data['tv_r2']),
            est_points=_to_array(data['est_points']),
            method=data['method'],
        )


@dataclass
class ParameterFunctionSpec:
    """真值参数随时间变化的函数形状"""
    kind: str
    theta: float = 0.35
    steepness: float = 15.0

    def __post_init__(self):
        if self.kind not in PARAMETER_KINDS:
            raise DataError(f"未知的参数函数类型: {self.kind}")
        if self.theta <= 0:
            raise DataError("theta 必须为正数")

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        theta = self.theta
        if self.kind == 'constant_nonzero':
            return np.full_like(t, theta)
        if self.kind == 'linear_up':
            return theta * t
        if self.kind == 'linear_down':
            return theta * (1.0 - t)
        if self.kind == 'sigmoid_up':
            return theta / (1.0 + np.exp(-self.steepness * (t - 0.5)))
        if self.kind == 'sigmoid_down':
            return theta / (1.0 + np.exp(self.steepness * (t - 0.5)))
        if self.kind == 'step_up':
            return np.where(t < 0.5, 0.0, theta)
        if self.kind == 'step_down':
            return np.where(t < 0.5, theta, 0.0)
        return np.zeros_like(t)


@dataclass
class CoefficientArray:
    """仿真真值：values[i, j, k] 为时间网格 t_k = (k+1)/n 上的系数"""
    values: np.ndarray
    specs: np.ndarray
    theta: float
    sigma: float
    seed: Optional[int]
    redraws: int = 0
    structure: str = 'random'
    n_edges: Optional[int] = None

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[2]

    def time_grid(self) -> np.ndarray:
        return np.arange(1, self.n + 1) / self.n

    def nonzero_mask(self) -> np.ndarray:
        return self.specs != 'zero'

    def evaluate_at(self, times: np.ndarray) -> np.ndarray:
        """在任意时点上线性插值真值（网格点上精确），返回 p×p×len(times)"""
        times = np.asarray(times, dtype=float)
        grid = self.time_grid()
        p = self.p
        flat = self.values.reshape(p * p, self.n)
        out = np.vstack([np.interp(times, grid, row) for row in flat])
        return out.reshape(p, p, len(times))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'p': self.p,
            'n': self.n,
            'specs': self.specs.tolist(),
            'theta': self.theta,
            'sigma': self.sigma,
            'noise_variance': self.sigma ** 2,
            'seed': self.seed,
            'redraws': self.redraws,
            'structure': self.structure,
            'n_edges': self.n_edges,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], steepness: float = 15.0) -> 'CoefficientArray':
        """由函数设定重新生成数值"""
        specs = np.array(data['specs'], dtype=object)
        n = int(data['n'])
        theta = float(data['theta'])
        grid = np.arange(1, n + 1) / n
        p = specs.shape[0]
        values = np.zeros((p, p, n))
        for i in range(p):
            for j in range(p):
                values[i, j] = ParameterFunctionSpec(specs[i, j], theta, steepness).evaluate(grid)
        return cls(
            values=values,
            specs=specs,
            theta=theta,
            sigma=float(data['sigma']),
            seed=data.get('seed'),
            redraws=int(data.get('redraws', 0)),
            structure=data.get('structure', 'random'),
            n_edges=data.get('n_edges'),
        )


@dataclass
class EvaluationReport:
    """
    评估报告（长表格式）

    rows: 每行 {method, n, kind, stat, prob, value}
    recovery: 每行 {method, n, sensitivity, precision, precision_defined, dense}
    over_time: 每行 {method, n, kind, est_index, stat, prob, value}
    """
    rows: List[Dict[str, Any]] = field(default_factory=list)
    recovery: List[Dict[str, Any]] = field(default_factory=list)
    over_time: List[Dict[str, Any]] = field(default_factory=list)
    iterations: Dict[str, int] = field(default_factory=dict)

    def cell(self, method: str, n: int, kind: str, stat: str = 'mean', prob: Optional[float] = None) -> float:
        for row in self.rows:
            if (row['method'] == method and row['n'] == n and row['kind'] == kind
                    and row['stat'] == stat and (prob is None or row['prob'] == prob)):
                return row['value']
        raise KeyError(f"报告中没有 {method}/{n}/{kind}/{stat}/{prob}")

    def recovery_for(self, method: str, n: int) -> Dict[str, Any]:
        for row in self.recovery:
            if row['method'] == method and row['n'] == n:
                return row
        raise KeyError(f"报告中没有 {method}/{n} 的结构恢复结果")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rows': [dict(row) for row in self.rows],
            'recovery': [dict(row) for row in self.recovery],
            'over_time': [dict(row) for row in self.over_time],
            'iterations': dict(self.iterations),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EvaluationReport':
        return cls(
            rows=[dict(row) for row in data.get('rows', [])],
            recovery=[dict(row) for row in data.get('recovery', [])],
            over_time=[dict(row) for row in data.get('over_time', [])],
            iterations=dict(data.get('iterations', {})),
        )
