# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 惩罚回归求解器
加权最小二乘、加权lasso（协方差更新的坐标下降）、λ路径与λ的K折交叉验证

lasso目标函数：(1/m) Σ_j w_j (y_j − β₀ − x_jᵀβ)² + λ‖β‖₁，截距不惩罚。
内部求解器支持批量：同一组预测变量下多个响应变量/多个训练折同时迭代。
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from config import config
from models import RegressionProblem, RegressionSolution
from utils.errors import DataError, IdentificationError, NumericalError

logger = logging.getLogger(__name__)


@dataclass
class LambdaCVResult:
    """λ交叉验证结果"""
    lambda_hat: float
    lambdas: np.ndarray
    cv_errors: np.ndarray
    fold_ids: np.ndarray

    @property
    def index(self) -> int:
        return int(np.argmin(self.cv_errors))


def _weighted_center(X: np.ndarray, Y: np.ndarray, w: np.ndarray):
    """按权重中心化，Y为 m×B"""
    sw = w.sum()
    x_bar = w @ X / sw
    y_bar = w @ Y / sw
    return X - x_bar, Y - y_bar, x_bar, y_bar


def _gram(Xc: np.ndarray, Yc: np.ndarray, w: np.ndarray, m: int):
    """返回 G = X̃ᵀWX̃ 与 c = X̃ᵀWỸ，其中 W = diag(w)/m"""
    Xw = Xc * (w / m)[:, None]
    return Xw.T @ Xc, Xw.T @ Yc


def weighted_least_squares_multi(X: np.ndarray, Y: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    多响应加权最小二乘（共用X与权重）

    Returns:
        (intercepts B, slopes q×B)
    """
    m = X.shape[0]
    Xc, Yc, x_bar, y_bar = _weighted_center(X, Y, w)
    G, C = _gram(Xc, Yc, w, m)
    if X.shape[1] == 0:
        return y_bar, np.zeros((0, Y.shape[1]))

    condition = np.linalg.cond(G)
    if not np.isfinite(condition) or condition > config.WLS_MAX_CONDITION:
        raise IdentificationError(
            f"加权Gram矩阵奇异或病态 (条件数 {condition:.3g})",
            constraint=f'cond(XᵀWX) <= {config.WLS_MAX_CONDITION:g}',
        )
    try:
        slopes = scipy.linalg.solve(G, C, assume_a='pos')
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise IdentificationError(f"加权最小二乘求解失败: {str(e)}", constraint='XᵀWX 正定')
    intercepts = y_bar - x_bar @ slopes
    return intercepts, slopes


def weighted_least_squares(problem: RegressionProblem) -> RegressionSolution:
    """加权最小二乘：最小化 Σ_j w_j (y_j − β₀ − x_jᵀβ)²"""
    intercepts, slopes = weighted_least_squares_multi(problem.X, problem.y[:, None], problem.w)
    intercept = float(intercepts[0])
    beta = slopes[:, 0]
    residual = problem.y - intercept - problem.X @ beta
    return RegressionSolution(intercept=intercept, slopes=beta, lam=0.0,
                              objective=float(np.sum(problem.w * residual ** 2)))


def lasso_objective(problem: RegressionProblem, intercept: float, slopes: np.ndarray, lam: float) -> float:
    """按 (1/m) 缩放的加权lasso目标函数值"""
    residual = problem.y - intercept - problem.X @ slopes
    return float(np.sum(problem.w * residual ** 2) / problem.m + lam * np.sum(np.abs(slopes)))


def _soft_threshold(z: np.ndarray, threshold: np.ndarray) -> np.ndarray:
    return np.sign(z) * np.maximum(np.abs(z) - threshold, 0.0)


def _coordinate_descent(G: np.ndarray, c: np.ndarray, lam: np.ndarray, beta: np.ndarray,
                        max_sweeps: int, tol: float, trace: Optional[list] = None) -> Tuple[np.ndarray, int]:
    """
    批量坐标下降：对每个批元素最小化 βᵀGβ − 2cᵀβ + λ‖β‖₁

    Args:
        G: B×q×q 中心化加权Gram矩阵
        c: B×q 中心化加权协方差
        lam: B 惩罚强度
        beta: B×q 初值（热启动）
        trace: 非None时逐轮追加目标函数值（B个元素的数组）

    Returns:
        (beta, 迭代轮数)
    """
    beta = beta.copy()
    n_batch, q = c.shape
    half_lam = lam / 2.0
    diag = np.einsum('bkk->bk', G)
    Gb = np.einsum('bkl,bl->bk', G, beta)

    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        for k in range(q):
            g_kk = diag[:, k]
            old = beta[:, k]
            rho = c[:, k] - Gb[:, k] + g_kk * old
            with np.errstate(divide='ignore', invalid='ignore'):
                new = np.where(g_kk > 0, _soft_threshold(rho, half_lam) / g_kk, 0.0)
            delta = new - old
            change = np.abs(delta).max()
            if change > 0:
                Gb += G[:, :, k] * delta[:, None]
                beta[:, k] = new
                max_change = max(max_change, change)
        if trace is not None:
            trace.append(np.einsum('bk,bk->b', beta, Gb) - 2 * np.einsum('bk,bk->b', c, beta)
                         + lam * np.abs(beta).sum(axis=1))
        if max_change < tol:
            return beta, sweep

    raise NumericalError(f"坐标下降在 {max_sweeps} 轮内未收敛 (容差 {tol:g})")


def _polish_active_set(G: np.ndarray, c: np.ndarray, lam: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """
    在活跃集与符号固定时精确求解KKT方程；
    若符号不变且非活跃坐标满足次梯度条件则采用精确解
    """
    beta = beta.copy()
    for b in range(beta.shape[0]):
        active = np.flatnonzero(beta[b] != 0)
        if len(active) == 0:
            continue
        signs = np.sign(beta[b, active])
        try:
            exact = scipy.linalg.solve(G[b][np.ix_(active, active)],
                                       c[b, active] - lam[b] / 2.0 * signs, assume_a='pos')
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            continue
        if not np.all(np.sign(exact) == signs):
            continue
        candidate = np.zeros_like(beta[b])
        candidate[active] = exact
        gradient = 2.0 * (G[b] @ candidate - c[b])
        inactive = np.setdiff1d(np.arange(len(candidate)), active)
        if np.all(np.abs(gradient[inactive]) <= lam[b] * (1 + 1e-12) + 1e-14):
            beta[b] = candidate
    return beta


def _solve_lasso_batch(G, c, lam, beta0=None, trace=None):
    if beta0 is None:
        beta0 = np.zeros_like(c)
    beta, sweeps = _coordinate_descent(G, c, lam, beta0, config.LASSO_MAX_SWEEPS,
                                       config.LASSO_TOLERANCE, trace=trace)
    return _polish_active_set(G, c, lam, beta), sweeps


def weighted_lasso(problem: RegressionProblem, lam: float, warm_start: Optional[np.ndarray] = None,
                   trace: Optional[list] = None) -> RegressionSolution:
    """
    加权lasso

    Args:
        problem: 回归问题
        lam: 惩罚强度 λ ≥ 0
        warm_start: 斜率初值
        trace: 非None时记录每轮坐标下降后的目标函数值（不含常数项）
    """
    if lam < 0:
        raise DataError(f"λ 必须非负: {lam}")
    m = problem.m
    Xc, Yc, x_bar, y_bar = _weighted_center(problem.X, problem.y[:, None], problem.w)
    G, C = _gram(Xc, Yc, problem.w, m)
    beta0 = None if warm_start is None else np.asarray(warm_start, dtype=float)[None, :]

    sweep_values = [] if trace is not None else None
    beta, sweeps = _solve_lasso_batch(G[None], C.T, np.array([float(lam)]), beta0, trace=sweep_values)
    if trace is not None:
        trace.extend(float(v[0]) for v in sweep_values)

    slopes = beta[0]
    intercept = float(y_bar[0] - x_bar @ slopes)
    return RegressionSolution(intercept=intercept, slopes=slopes, lam=float(lam),
                              objective=lasso_objective(problem, intercept, slopes, lam), sweeps=sweeps)


def _lambda_max_multi(X: np.ndarray, Y: np.ndarray, w: np.ndarray) -> np.ndarray:
    Xc, Yc, _, _ = _weighted_center(X, Y, w)
    _, C = _gram(Xc, Yc, w, X.shape[0])
    return 2.0 * np.abs(C).max(axis=0) if C.shape[0] else np.zeros(Y.shape[1])


def lambda_max(problem: RegressionProblem) -> float:
    """使全部斜率为0的最小λ：2·max_k |(1/m) Σ w x̃_k ỹ|"""
    return float(_lambda_max_multi(problem.X, problem.y[:, None], problem.w)[0])


def _geometric_path(lam_max: np.ndarray, n_lambda: int, min_ratio: float) -> np.ndarray:
    return np.vstack([np.geomspace(top, top * min_ratio, n_lambda) for top in lam_max])


def lambda_path(problem: RegressionProblem, n_lambda: int = None, min_ratio: float = None) -> np.ndarray:
    """
    λ路径：从λ_max几何递减到 λ_max·min_ratio

    Raises:
        DataError: 响应变量退化（中心化后全为0）
    """
    n_lambda = n_lambda or config.LAMBDA_PATH_LENGTH
    min_ratio = min_ratio or config.LAMBDA_MIN_RATIO
    top = lambda_max(problem)
    if not top > 0:
        raise DataError("响应变量退化: λ_max 为0, 无法构造λ路径")
    return _geometric_path(np.array([top]), n_lambda, min_ratio)[0]


def assign_folds(m: int, folds: int, seed: Optional[int]) -> np.ndarray:
    """随机划分K折（按种子确定）"""
    if m < folds:
        raise DataError(f"行数 {m} 少于折数 {folds}")
    rng = np.random.default_rng(seed)
    fold_ids = np.empty(m, dtype=np.int64)
    fold_ids[rng.permutation(m)] = np.arange(m) % folds
    return fold_ids


def _cv_lasso_batch(X: np.ndarray, Y: np.ndarray, w: np.ndarray, folds: int, seed: Optional[int],
                    n_lambda: int, min_ratio: float):
    """
    多响应λ交叉验证：所有折、所有响应变量在同一批中迭代

    Returns:
        (lambdas B×L, cv_errors B×L, fold_ids)
    """
    m, q = X.shape
    n_resp = Y.shape[1]
    top = _lambda_max_multi(X, Y, w)
    if not np.all(top > 0):
        bad = np.flatnonzero(~(top > 0))
        raise DataError(f"响应变量退化: 第 {', '.join(str(i) for i in bad)} 个响应的 λ_max 为0")
    lambdas = _geometric_path(top, n_lambda, min_ratio)
    fold_ids = assign_folds(m, folds, seed)

    G_list, c_list, centers, tests = [], [], [], []
    for f in range(folds):
        train = fold_ids != f
        test = ~train
        w_test = w[test]
        if not w_test.sum() > 0:
            raise DataError(f"第 {f + 1} 折的总权重为0")
        if not w[train].sum() > 0:
            raise DataError(f"第 {f + 1} 折的训练集总权重为0")
        Xc, Yc, x_bar, y_bar = _weighted_center(X[train], Y[train], w[train])
        G, C = _gram(Xc, Yc, w[train], int(train.sum()))
        G_list.append(np.broadcast_to(G, (n_resp, q, q)))
        c_list.append(C.T)
        centers.append((x_bar, y_bar))
        tests.append(test)

    G_all = np.concatenate(G_list, axis=0)
    c_all = np.concatenate(c_list, axis=0)
    lam_all = np.tile(lambdas, (folds, 1))
    beta = np.zeros_like(c_all)
    errors = np.zeros((folds, n_resp, n_lambda))

    for j in range(n_lambda):
        beta, _ = _coordinate_descent(G_all, c_all, lam_all[:, j], beta,
                                      config.LASSO_MAX_SWEEPS, config.LASSO_TOLERANCE)
        for f in range(folds):
            x_bar, y_bar = centers[f]
            slopes = beta[f * n_resp:(f + 1) * n_resp].T
            test = tests[f]
            pred = y_bar - x_bar @ slopes + X[test] @ slopes
            w_test = w[test]
            errors[f, :, j] = w_test @ (Y[test] - pred) ** 2 / w_test.sum()

    return lambdas, errors.mean(axis=0), fold_ids


def cross_validate_lambda(problem: RegressionProblem, folds: int = None, seed: Optional[int] = None,
                          n_lambda: int = None) -> LambdaCVResult:
    """
    K折交叉验证选择λ（取平均加权平方预测误差最小者）

    Args:
        problem: 回归问题
        folds: 折数，默认10
        seed: 折划分的随机种子
        n_lambda: λ路径长度
    """
    folds = folds or config.LAMBDA_CV_FOLDS
    n_lambda = n_lambda or config.LAMBDA_PATH_LENGTH
    lambdas, cv_errors, fold_ids = _cv_lasso_batch(problem.X, problem.y[:, None], problem.w,
                                                   folds, seed, n_lambda, config.LAMBDA_MIN_RATIO)
    best = int(np.argmin(cv_errors[0]))
    return LambdaCVResult(lambda_hat=float(lambdas[0, best]), lambdas=lambdas[0],
                          cv_errors=cv_errors[0], fold_ids=fold_ids)


def weighted_lasso_cv_multi(X: np.ndarray, Y: np.ndarray, w: np.ndarray, folds: int = None,
                            seed: Optional[int] = None, n_lambda: int = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    多响应加权lasso：每个响应各自交叉验证选择λ后在全部数据上拟合（折划分共用）

    Returns:
        (intercepts B, slopes q×B, lambda_hat B)
    """
    folds = folds or config.LAMBDA_CV_FOLDS
    n_lambda = n_lambda or config.LAMBDA_PATH_LENGTH
    lambdas, cv_errors, _ = _cv_lasso_batch(X, Y, w, folds, seed, n_lambda, config.LAMBDA_MIN_RATIO)
    best = np.argmin(cv_errors, axis=1)
    lambda_hat = lambdas[np.arange(len(best)), best]

    m = X.shape[0]
    Xc, Yc, x_bar, y_bar = _weighted_center(X, Y, w)
    G, C = _gram(Xc, Yc, w, m)
    n_resp = Y.shape[1]
    beta, _ = _solve_lasso_batch(np.broadcast_to(G, (n_resp,) + G.shape), C.T, lambda_hat)
    slopes = beta.T
    intercepts = y_bar - x_bar @ slopes
    return intercepts, slopes, lambda_hat


def kkt_violation(problem: RegressionProblem, solution: RegressionSolution) -> float:
    """
    KKT条件的最大违反量：非零斜率处 |∇_k + λ·sign(β_k)|，零斜率处 max(|∇_k| − λ, 0)
    """
    residual = problem.y - solution.intercept - problem.X @ solution.slopes
    gradient = -2.0 * (problem.w * residual) @ problem.X / problem.m
    lam = solution.lam
    nonzero = solution.slopes != 0
    violation = np.where(nonzero,
                         np.abs(gradient + lam * np.sign(solution.slopes)),
                         np.maximum(np.abs(gradient) - lam, 0.0))
    return float(violation.max()) if violation.size else 0.0
