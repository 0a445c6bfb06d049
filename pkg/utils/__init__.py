# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 工具模块
"""

from .errors import TvvarError, ConfigError, DataError, IdentificationError, NumericalError

__all__ = ['TvvarError', 'ConfigError', 'DataError', 'IdentificationError', 'NumericalError']
