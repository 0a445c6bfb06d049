# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 异常定义
命令行按异常类别映射退出码：配置错误1，数据/可识别性错误2，数值失败3
"""


class TvvarError(Exception):
    """工具包异常基类"""

    exit_code = 1


class ConfigError(TvvarError):
    """用法或配置错误"""

    exit_code = 1


class DataError(TvvarError, ValueError):
    """输入数据错误"""

    exit_code = 2


class IdentificationError(DataError):
    """模型不可识别（有效样本不足）"""

    def __init__(self, message: str, constraint: str = ''):
        super().__init__(message)
        self.constraint = constraint


class NumericalError(TvvarError, ArithmeticError):
    """数值计算失败或不收敛"""

    exit_code = 3
