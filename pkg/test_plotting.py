# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 绘图服务测试
"""

import numpy as np

from models import EvaluationReport, TimeVaryingVarModel
from services.plotting import (plot_bandwidth_errors, plot_error_by_n, plot_heatmap, plot_recovery,
                               plot_trajectories)


def small_model():
    rng = np.random.default_rng(0)
    return TimeVaryingVarModel(est_points=np.linspace(0, 1, 4), intercepts=np.zeros((2, 4)),
                               coeffs=rng.normal(scale=0.2, size=(2, 2, 1, 4)), method='KS',
                               lags=[1], labels=['a', 'b'])


def small_report():
    report = EvaluationReport()
    for method, dense in (('KS', True), ('KS-L1', False)):
        for n in (36, 103):
            report.rows.append({'method': method, 'n': n, 'kind': 'linear', 'stat': 'mean',
                                'prob': None, 'value': 1.0 / n})
            for prob, factor in ((0.25, 0.5), (0.75, 1.5)):
                report.rows.append({'method': method, 'n': n, 'kind': 'linear', 'stat': 'quantile',
                                    'prob': prob, 'value': factor / n})
            report.recovery.append({'method': method, 'n': n, 'sensitivity': 0.8,
                                    'precision': None if dense else 0.6,
                                    'precision_defined': 0 if dense else 1, 'dense': dense})
    return report


def test_model_plots_are_svg(tmp_path):
    model = small_model()
    trajectories = plot_trajectories(model, str(tmp_path / 'plots' / 'trajectories.svg'))
    heatmap = plot_heatmap(model, str(tmp_path / 'plots' / 'heatmap.svg'))
    for path in (trajectories, heatmap):
        assert open(path, encoding='utf-8').read().lstrip().startswith('<?xml')


def test_plots_are_reproducible(tmp_path):
    """相同输入两次输出字节一致"""
    first = plot_trajectories(small_model(), str(tmp_path / 'first.svg'))
    second = plot_trajectories(small_model(), str(tmp_path / 'second.svg'))
    assert open(first, 'rb').read() == open(second, 'rb').read()


def test_evaluation_plots(tmp_path):
    report = small_report()
    for path in (plot_error_by_n(report, str(tmp_path / 'error_by_n.svg')),
                 plot_recovery(report, str(tmp_path / 'recovery.svg')),
                 plot_bandwidth_errors(np.array([0.5, 0.1, 0.3]), np.array([1.0, 1.2, 0.9]),
                                       str(tmp_path / 'bandwidth.svg'))):
        assert '<svg' in open(path, encoding='utf-8').read()
