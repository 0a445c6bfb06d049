# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 样条估计器
以时间的薄板回归样条为基，对每个方程拟合变系数回归（截距与每个滞后效应各一条平滑曲线），
平滑参数按GCV选择，并给出有效自由度、逐点贝叶斯可信带与显著性阈值化（GAM-st）
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy import optimize
from scipy.stats import norm

from config import config
from models import LaggedDesign, TimeVaryingVarModel, METHOD_GAM, METHOD_GAM_ST
from utils.errors import DataError, IdentificationError, NumericalError, TvvarError
from utils.parallel import run_tasks

logger = logging.getLogger(__name__)

KNOT_SUBSAMPLE_SEED = 20220101


def _radial(r: np.ndarray) -> np.ndarray:
    """一维、二阶导数惩罚的薄板样条径向函数 η(r) = r³/12"""
    return np.abs(r) ** 3 / 12.0


@dataclass
class SplineBasis:
    """
    低秩薄板回归样条基

    列顺序为 [1, t, 惩罚方向...]；S为对角阵，前两个（零空间）对角元为0，其余按惩罚特征值升序排列
    """
    k: int
    B: np.ndarray
    S: np.ndarray
    knots: np.ndarray
    transform: np.ndarray
    nullspace_dim: int = 2

    def evaluate(self, times: Sequence[float]) -> np.ndarray:
        """在任意时点上计算基函数值，返回 len(times)×k"""
        times = np.asarray(times, dtype=float)
        radial = _radial(times[:, None] - self.knots[None, :]) @ self.transform
        return np.column_stack([np.ones_like(times), times, radial])

    @property
    def penalty_eigenvalues(self) -> np.ndarray:
        return np.diag(self.S)[self.nullspace_dim:]


def select_k(n: int, p: int, k_max: int = None) -> int:
    """
    基函数个数：满足 k(p+1) < n 的最大k，不超过k_max；连k=3都不满足时无法识别
    """
    k_max = config.K_MAX if k_max is None else k_max
    if n < 1 or p < 1:
        raise DataError(f"n 和 p 必须为正整数: n={n}, p={p}")
    k = (n - 1) // (p + 1)
    if k < 3:
        raise IdentificationError(
            f"n={n}, p={p} 时连 3 个基函数也无法识别 (需要 3·(p+1) < n)",
            constraint='k(p+1) < n',
        )
    return min(k, k_max)


def tprs_basis(times: Sequence[float], k: int, max_knots: int = None) -> SplineBasis:
    """
    构造一维薄板回归样条基

    在唯一时点上建立三次径向核矩阵，取绝对值最大的k个特征方向，
    再去除与 {1, t} 相关的2个方向，得到k−2个惩罚方向；最后旋转使惩罚矩阵对角化。

    Args:
        times: 观测时点
        k: 基函数个数（≥3）
        max_knots: 节点数上限，唯一时点更多时以固定种子抽取子集
    """
    times = np.asarray(times, dtype=float)
    max_knots = max_knots or config.TPRS_MAX_KNOTS
    m = len(times)
    if k < 3:
        raise DataError(f"基函数个数至少为3: {k}")
    if k >= m:
        raise DataError(f"基函数个数 {k} 必须小于观测数 {m}")

    knots = np.unique(times)
    if len(knots) < 2:
        raise DataError("所有时点相同, 无法构造样条基")
    if len(knots) < k:
        raise DataError(f"唯一时点数 {len(knots)} 少于基函数个数 {k}")
    if len(knots) > max_knots:
        rng = np.random.default_rng(KNOT_SUBSAMPLE_SEED)
        knots = np.sort(rng.choice(knots, size=max_knots, replace=False))

    kernel = _radial(knots[:, None] - knots[None, :])
    eigenvalues, eigenvectors = scipy.linalg.eigh(kernel)
    top = np.argsort(-np.abs(eigenvalues), kind='stable')[:k]
    U = eigenvectors[:, top]
    D = eigenvalues[top]

    # 约束 Tᵀδ = 0：惩罚方向与零空间 {1, t} 正交
    T = np.column_stack([np.ones_like(knots), knots])
    Z = scipy.linalg.null_space(T.T @ U)
    penalty = Z.T @ (D[:, None] * Z)
    penalty = (penalty + penalty.T) / 2.0
    lam, V = scipy.linalg.eigh(penalty)
    lam = np.maximum(lam, 0.0)

    transform = U @ Z @ V
    S = np.zeros((k, k))
    S[2:, 2:] = np.diag(lam)
    basis = SplineBasis(k=k, B=np.empty((0, k)), S=S, knots=knots, transform=transform)
    basis.B = basis.evaluate(times)
    return basis


@dataclass
class GamEquationFit:
    """单个方程的变系数拟合结果（平滑曲线0为截距，s≥1为第s个预测变量的效应）"""
    eq_index: int
    theta: np.ndarray
    lambdas: np.ndarray
    penalty_scales: np.ndarray
    edf: np.ndarray
    rss: float
    m: int
    sigma2: float
    covariance: np.ndarray
    basis: SplineBasis
    gcv: float = float('nan')
    converged: bool = True
    warnings: List[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.basis.k

    @property
    def n_smooth(self) -> int:
        return len(self.lambdas)

    @property
    def edf_total(self) -> float:
        return float(np.sum(self.edf))

    def smooth_coefficients(self, s: int) -> np.ndarray:
        return self.theta[s * self.k:(s + 1) * self.k]

    def trajectories(self, eval_times: Sequence[float]) -> np.ndarray:
        """各平滑曲线在eval_times上的取值，返回 n_smooth×E"""
        B_e = self.basis.evaluate(eval_times)
        return (B_e @ self.theta.reshape(self.n_smooth, self.k).T).T


class _PenalizedSystem:
    """变系数回归的惩罚最小二乘系统 ‖y − Zθ‖² + Σ_s λ_s θ_sᵀ S̃_s θ_s"""

    def __init__(self, design: LaggedDesign, eq_index: int, basis: SplineBasis):
        self.basis = basis
        self.k = basis.k
        self.y = design.responses[:, eq_index]
        self.m = len(self.y)
        covariates = np.column_stack([np.ones(self.m), design.predictors])
        self.n_smooth = covariates.shape[1]
        self.Z = np.hstack([basis.B * covariates[:, [s]] for s in range(self.n_smooth)])
        self.ZtZ = self.Z.T @ self.Z
        self.Zty = self.Z.T @ self.y

        # 惩罚按对应设计块的尺度归一化，使λ在各平滑之间可比
        s_norm = np.linalg.norm(basis.S)
        self.scales = np.array([
            np.linalg.norm(self.ZtZ[self._block(s), self._block(s)]) / s_norm
            for s in range(self.n_smooth)
        ])

    def _block(self, s: int) -> slice:
        return slice(s * self.k, (s + 1) * self.k)

    def system_matrix(self, lambdas: np.ndarray) -> np.ndarray:
        A = self.ZtZ.copy()
        for s in range(self.n_smooth):
            block = self._block(s)
            A[block, block] += lambdas[s] * self.scales[s] * self.basis.S
        return A

    def _factor(self, lambdas: np.ndarray):
        return scipy.linalg.cho_factor(self.system_matrix(lambdas))

    def gcv(self, log_lambdas: np.ndarray) -> float:
        """给定 log λ 时的GCV（无法求解时为无穷大）"""
        try:
            factor = self._factor(np.exp(log_lambdas))
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            return np.inf
        theta = scipy.linalg.cho_solve(factor, self.Zty)
        rss = float(np.sum((self.y - self.Z @ theta) ** 2))
        edf = float(np.trace(scipy.linalg.cho_solve(factor, self.ZtZ)))
        if edf >= self.m:
            return np.inf
        return self.m * rss / (self.m - edf) ** 2

    def solve(self, lambdas: np.ndarray, eq_index: int) -> GamEquationFit:
        lambdas = np.asarray(lambdas, dtype=float)
        try:
            A_inv = scipy.linalg.cho_solve(self._factor(lambdas), np.eye(self.ZtZ.shape[0]))
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            raise NumericalError(f"方程 {eq_index} 的惩罚系统不正定")
        A_inv = (A_inv + A_inv.T) / 2.0
        theta = A_inv @ self.Zty
        rss = float(np.sum((self.y - self.Z @ theta) ** 2))
        F = A_inv @ self.ZtZ
        edf = np.array([np.trace(F[self._block(s), self._block(s)]) for s in range(self.n_smooth)])
        dof = self.m - edf.sum()
        sigma2 = rss / dof if dof > 0 else np.nan
        fit = GamEquationFit(
            eq_index=eq_index,
            theta=theta,
            lambdas=lambdas,
            penalty_scales=self.scales.copy(),
            edf=edf,
            rss=rss,
            m=self.m,
            sigma2=sigma2,
            covariance=A_inv * sigma2,
            basis=self.basis,
        )
        if dof > 0:
            fit.gcv = gcv_score(fit)
        return fit


def gcv_score(fit: GamEquationFit) -> float:
    """GCV = m·RSS/(m − edf_total)²"""
    edf_total = fit.edf_total
    if edf_total >= fit.m:
        raise NumericalError(f"有效自由度 {edf_total:.3f} 不小于行数 {fit.m}, GCV无定义")
    return fit.m * fit.rss / (fit.m - edf_total) ** 2


def _optimize_smoothing(system: _PenalizedSystem, eq_index: int):
    """
    GCV最小化：公共λ网格搜索与细化，然后对每个平滑参数循环做一维有界搜索

    一维搜索用 scipy 的有界Brent方法（黄金分割加抛物线插值），不是纯黄金分割搜索。

    Returns:
        (log_lambdas, gcv, converged)
    """
    gcv_config = config.get_gcv_config()
    lo, hi = gcv_config['log_lambda_min'], gcv_config['log_lambda_max']
    n_smooth = system.n_smooth

    def common(rho):
        return system.gcv(np.full(n_smooth, rho))

    grid = np.linspace(lo, hi, gcv_config['start_grid'])
    values = np.array([common(rho) for rho in grid])
    if not np.any(np.isfinite(values)):
        raise NumericalError(f"方程 {eq_index} 在所有平滑参数下GCV均无定义")
    best = int(np.argmin(values))
    step = grid[1] - grid[0]
    result = optimize.minimize_scalar(common, bounds=(max(lo, grid[best] - step), min(hi, grid[best] + step)),
                                      method='bounded', options={'xatol': 1e-6})
    if result.fun < values[best]:
        rho = np.full(n_smooth, float(result.x))
        current = float(result.fun)
    else:
        rho = np.full(n_smooth, grid[best])
        current = float(values[best])

    for cycle in range(gcv_config['max_cycles']):
        previous = current
        for s in range(n_smooth):
            def partial(value, s=s):
                trial = rho.copy()
                trial[s] = value
                return system.gcv(trial)

            result = optimize.minimize_scalar(partial, bounds=(lo, hi), method='bounded',
                                              options={'xatol': 1e-4})
            if result.fun < current:
                rho[s] = float(result.x)
                current = float(result.fun)
        if previous - current < gcv_config['tol']:
            return rho, current, True

    logger.warning(f"方程 {eq_index} 的GCV优化在 {gcv_config['max_cycles']} 轮内未收敛, 返回当前最优值")
    return rho, current, False


def fit_gam_equation(design: LaggedDesign, eq_index: int, basis: SplineBasis,
                     lambdas: Optional[Sequence[float]] = None) -> GamEquationFit:
    """
    拟合单个方程的变系数回归

    Args:
        design: 设计矩阵
        eq_index: 响应变量下标
        basis: 时间上的样条基
        lambdas: 固定的平滑参数（每个平滑一个）；None时按GCV选择
    """
    m = design.included_rows
    n_smooth = design.q + 1
    if m <= basis.k * n_smooth:
        raise IdentificationError(
            f"方程 {eq_index} 有 {m} 行, 不足以识别 {basis.k}×{n_smooth} 个样条系数",
            constraint='m > k(q+1)',
        )

    system = _PenalizedSystem(design, eq_index, basis)
    converged = True
    if lambdas is None:
        rho, _, converged = _optimize_smoothing(system, eq_index)
        lambdas = np.exp(rho)
    elif len(lambdas) != n_smooth:
        raise DataError(f"平滑参数个数应为 {n_smooth}, 实际 {len(lambdas)}")

    fit = system.solve(np.asarray(lambdas, dtype=float), eq_index)
    fit.converged = converged
    if not converged:
        fit.warnings.append('gcv_not_converged')
    if np.any(fit.edf > config.EDF_WARNING_RATIO * basis.k):
        message = f"方程 {eq_index} 的部分平滑曲线有效自由度接近 k={basis.k}, 可考虑增加基函数个数"
        fit.warnings.append('edf_near_k')
        logger.warning(message)
    return fit


@dataclass
class CredibleBands:
    """逐点可信带，数组形状均为 n_smooth×E"""
    lower: np.ndarray
    point: np.ndarray
    upper: np.ndarray
    level: float
    eval_times: np.ndarray

    def covers_zero(self) -> np.ndarray:
        return (self.lower <= 0) & (self.upper >= 0)


def credible_bands(fit: GamEquationFit, eval_times: Sequence[float], level: float = None) -> CredibleBands:
    """
    逐点贝叶斯可信带：point ± z·sqrt(diag(B_e Cov_s B_eᵀ))
    """
    level = config.CREDIBLE_LEVEL if level is None else level
    if not 0 < level < 1:
        raise DataError(f"可信水平必须位于 (0, 1): {level}")
    try:
        np.linalg.cholesky(fit.covariance)
    except np.linalg.LinAlgError:
        raise NumericalError(f"方程 {fit.eq_index} 的后验协方差不正定")

    eval_times = np.asarray(eval_times, dtype=float)
    B_e = fit.basis.evaluate(eval_times)
    z = norm.ppf((1.0 + level) / 2.0)
    point = fit.trajectories(eval_times)
    half = np.empty_like(point)
    k = fit.k
    for s in range(fit.n_smooth):
        block = fit.covariance[s * k:(s + 1) * k, s * k:(s + 1) * k]
        variance = np.einsum('ek,kl,el->e', B_e, block, B_e)
        half[s] = z * np.sqrt(np.maximum(variance, 0.0))
    return CredibleBands(lower=point - half, point=point, upper=point + half,
                         level=float(level), eval_times=eval_times)


def _reshape_lag_smooths(values: np.ndarray, p: int, n_lags: int) -> np.ndarray:
    """(q)×E 的滞后平滑曲线整理为 p_j×L×E（行按滞后阶优先排列）"""
    return values.reshape(n_lags, p, -1).transpose(1, 0, 2)


def fit_tv_var_gam(design: LaggedDesign, est_points: Sequence[float], k: Optional[int] = None,
                   threshold: bool = False, level: float = None, k_max: int = None,
                   threads: Optional[int] = None) -> TimeVaryingVarModel:
    """
    样条时变VAR：逐方程拟合，在估计点上取值；threshold=True时把可信带覆盖0处的滞后系数置为0

    Args:
        design: 设计矩阵
        est_points: 估计点
        k: 基函数个数，None时按 select_k 自动选择
        threshold: 是否做显著性阈值化（GAM-st）
        level: 可信水平
        k_max: 自动选择k时的上限
    """
    est_points = np.asarray(est_points, dtype=float)
    if est_points.ndim != 1 or len(est_points) == 0:
        raise DataError("估计点不能为空")
    level = config.CREDIBLE_LEVEL if level is None else level
    p, n_lags = design.p, len(design.lags)
    k = k or select_k(design.included_rows, design.q, k_max)
    basis = tprs_basis(design.response_times, k)

    def fit_equation(i):
        try:
            fit = fit_gam_equation(design, i, basis)
            return fit, credible_bands(fit, est_points, level)
        except IdentificationError as e:
            raise IdentificationError(f"方程 {i} ({design.labels[i]}): {str(e)}", constraint=e.constraint) from e
        except TvvarError as e:
            raise type(e)(f"方程 {i} ({design.labels[i]}): {str(e)}") from e

    results = run_tasks(fit_equation, range(p), threads)

    n_est = len(est_points)
    intercepts = np.empty((p, n_est))
    coeffs = np.empty((p, p, n_lags, n_est))
    lower = np.empty_like(coeffs)
    upper = np.empty_like(coeffs)
    intercept_bands = np.empty((p, 2, n_est))
    for i, (fit, bands) in enumerate(results):
        intercepts[i] = bands.point[0]
        intercept_bands[i] = [bands.lower[0], bands.upper[0]]
        coeffs[i] = _reshape_lag_smooths(bands.point[1:], p, n_lags)
        lower[i] = _reshape_lag_smooths(bands.lower[1:], p, n_lags)
        upper[i] = _reshape_lag_smooths(bands.upper[1:], p, n_lags)

    if threshold:
        coeffs = np.where((lower <= 0) & (upper >= 0), 0.0, coeffs)

    fits = [fit for fit, _ in results]
    edf = np.array([fit.edf for fit in fits])
    model = TimeVaryingVarModel(
        est_points=est_points,
        intercepts=intercepts,
        coeffs=coeffs,
        method=METHOD_GAM_ST if threshold else METHOD_GAM,
        lags=list(design.lags),
        labels=list(design.labels),
        scaling=design.scaling,
        diagnostics={
            'k': int(k),
            'edf': edf,
            'gcv': np.array([fit.gcv for fit in fits]),
            'smoothing': np.array([fit.lambdas for fit in fits]),
            'gcv_converged': [bool(fit.converged) for fit in fits],
            'band_level': float(level),
            'band_lower': lower,
            'band_upper': upper,
            'intercept_bands': intercept_bands,
        },
    )
    logger.info(f"样条估计完成: 方法 {model.method}, k={k}, 估计点 {n_est}, "
                f"edf 范围 [{edf.min():.2f}, {edf.max():.2f}]")
    return model
