# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 配置管理模块
管理求解器参数、默认网格、仿真预设、日志等配置项
"""

import os
import psutil
from dotenv import load_dotenv

# 加载环境变量
load_dotenv()


def _float_list(value: str):
    return [float(v) for v in value.split(',') if v.strip()]


class Config:
    """系统配置类"""

    TOOL_NAME = 'tvvar'
    TOOL_VERSION = '1.0.0'

    # 日志配置
    LOG_LEVEL = os.getenv('TVVAR_LOG_LEVEL', 'INFO')
    LOG_FILE_PATH = os.getenv('TVVAR_LOG_FILE_PATH', '')  # 为空时只输出到终端

    # 运行配置
    DEFAULT_SEED = int(os.getenv('TVVAR_DEFAULT_SEED', 1))
    DEFAULT_THREADS = int(os.getenv('TVVAR_THREADS', psutil.cpu_count(logical=False) or 1))

    # lasso坐标下降配置
    LASSO_MAX_SWEEPS = int(os.getenv('TVVAR_LASSO_MAX_SWEEPS', 10000))
    LASSO_TOLERANCE = float(os.getenv('TVVAR_LASSO_TOLERANCE', 1e-7))
    LAMBDA_PATH_LENGTH = int(os.getenv('TVVAR_LAMBDA_PATH_LENGTH', 50))
    LAMBDA_MIN_RATIO = float(os.getenv('TVVAR_LAMBDA_MIN_RATIO', 1e-4))
    LAMBDA_CV_FOLDS = int(os.getenv('TVVAR_LAMBDA_CV_FOLDS', 10))
    WLS_MAX_CONDITION = float(os.getenv('TVVAR_WLS_MAX_CONDITION', 1e12))

    # 核平滑配置（论文中的候选带宽序列）
    DEFAULT_BANDWIDTH_GRID = _float_list(os.getenv(
        'TVVAR_BANDWIDTH_GRID',
        '0.01,0.045,0.08,0.115,0.185,0.22,0.225,0.29,0.325,0.430,0.465,0.5'
    ))
    # 命令行bwselect默认：[0.01, 1]上10个等距值
    CLI_BANDWIDTH_GRID_SIZE = int(os.getenv('TVVAR_CLI_BANDWIDTH_GRID_SIZE', 10))
    DEFAULT_BW_FOLDS = int(os.getenv('TVVAR_BW_FOLDS', 1))
    DEFAULT_EST_POINTS = int(os.getenv('TVVAR_EST_POINTS', 20))

    # 样条估计配置
    K_MAX = int(os.getenv('TVVAR_K_MAX', 10))
    GCV_LOG_LAMBDA_MIN = float(os.getenv('TVVAR_GCV_LOG_LAMBDA_MIN', -8.0))
    GCV_LOG_LAMBDA_MAX = float(os.getenv('TVVAR_GCV_LOG_LAMBDA_MAX', 12.0))
    GCV_TOLERANCE = float(os.getenv('TVVAR_GCV_TOLERANCE', 1e-7))
    GCV_MAX_CYCLES = int(os.getenv('TVVAR_GCV_MAX_CYCLES', 30))
    GCV_START_GRID = int(os.getenv('TVVAR_GCV_START_GRID', 41))
    TPRS_MAX_KNOTS = int(os.getenv('TVVAR_TPRS_MAX_KNOTS', 2000))
    EDF_WARNING_RATIO = float(os.getenv('TVVAR_EDF_WARNING_RATIO', 0.9))
    CREDIBLE_LEVEL = float(os.getenv('TVVAR_CREDIBLE_LEVEL', 0.95))

    # bootstrap配置
    BOOTSTRAP_NB = int(os.getenv('TVVAR_BOOTSTRAP_NB', 50))
    BOOTSTRAP_BLOCKS = int(os.getenv('TVVAR_BOOTSTRAP_BLOCKS', 10))
    BOOTSTRAP_MAX_FAILURE_RATE = float(os.getenv('TVVAR_BOOTSTRAP_MAX_FAILURE_RATE', 0.2))
    BOOTSTRAP_QUANTILES = _float_list(os.getenv('TVVAR_BOOTSTRAP_QUANTILES', '0.05,0.95'))

    # 仿真配置
    SIM_THETA = float(os.getenv('TVVAR_SIM_THETA', 0.35))
    SIM_NOISE_VARIANCE = float(os.getenv('TVVAR_SIM_NOISE_VARIANCE', 0.1))
    SIM_MAX_REDRAWS = int(os.getenv('TVVAR_SIM_MAX_REDRAWS', 1000))
    SIM_SIGMOID_STEEPNESS = float(os.getenv('TVVAR_SIM_SIGMOID_STEEPNESS', 15.0))
    SIM_N_GRID = [20, 30, 36, 69, 103, 155, 234, 352, 530, 798, 1201, 1808]
    SIM_PRESETS = {
        'sim-a': {'p': 10, 'n_edges': 26, 'structure': 'random'},
        'sim-b': {'p': 20, 'n_edges': None, 'structure': 'upper_triangular'},
    }

    # 评估配置
    EVAL_QUANTILE_PRESETS = {
        'iqr': [0.25, 0.75],
        'decile': [0.10, 0.90],
    }

    # 数据输入配置
    CSV_MISSING_TOKENS = ['', 'NA']
    CSV_ENCODING = os.getenv('TVVAR_CSV_ENCODING', 'utf-8')

    @classmethod
    def get_lasso_config(cls):
        """获取lasso求解器配置"""
        return {
            'max_sweeps': cls.LASSO_MAX_SWEEPS,
            'tol': cls.LASSO_TOLERANCE,
            'n_lambda': cls.LAMBDA_PATH_LENGTH,
            'min_ratio': cls.LAMBDA_MIN_RATIO,
            'folds': cls.LAMBDA_CV_FOLDS,
        }

    @classmethod
    def get_gcv_config(cls):
        """获取GCV平滑参数搜索配置"""
        return {
            'log_lambda_min': cls.GCV_LOG_LAMBDA_MIN,
            'log_lambda_max': cls.GCV_LOG_LAMBDA_MAX,
            'tol': cls.GCV_TOLERANCE,
            'max_cycles': cls.GCV_MAX_CYCLES,
            'start_grid': cls.GCV_START_GRID,
        }

    @classmethod
    def get_simulation_config(cls):
        """获取仿真配置"""
        return {
            'theta': cls.SIM_THETA,
            'noise_variance': cls.SIM_NOISE_VARIANCE,
            'max_redraws': cls.SIM_MAX_REDRAWS,
            'n_grid': list(cls.SIM_N_GRID),
            'presets': dict(cls.SIM_PRESETS),
        }

    @classmethod
    def validate_config(cls):
        """验证关键配置项"""
        if cls.LOG_FILE_PATH:
            log_dir = os.path.dirname(cls.LOG_FILE_PATH)
            if log_dir:
                os.makedirs(log_dir, exist_ok=True)

        problems = []
        if cls.LASSO_TOLERANCE <= 0:
            problems.append('TVVAR_LASSO_TOLERANCE 必须为正数')
        if not 0 < cls.LAMBDA_MIN_RATIO < 1:
            problems.append('TVVAR_LAMBDA_MIN_RATIO 必须在 (0, 1) 内')
        if cls.GCV_LOG_LAMBDA_MIN >= cls.GCV_LOG_LAMBDA_MAX:
            problems.append('GCV 搜索区间下界必须小于上界')
        if any(b <= 0 for b in cls.DEFAULT_BANDWIDTH_GRID):
            problems.append('默认带宽网格必须全部为正数')
        if cls.DEFAULT_THREADS < 1:
            problems.append('TVVAR_THREADS 必须至少为 1')
        if problems:
            raise ValueError('; '.join(problems))
        return True


# 创建全局配置实例
config = Config()

# 系统启动时验证配置
if __name__ == "__main__":
    config.validate_config()
    print(f"✅ {config.TOOL_NAME} {config.TOOL_VERSION} 配置验证完成")
