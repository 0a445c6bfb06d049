# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 服务模块
"""
