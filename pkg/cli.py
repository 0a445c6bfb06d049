# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 命令行入口
子命令：simulate、fit、bwselect、resample、predict、evaluate

参数表 COMMAND_OPTIONS 是唯一的参数来源：命令行帮助、配置文件校验与默认值都由它生成。
优先级：命令行参数 > 配置文件 > 默认值。
退出码：0 成功，1 用法/配置错误，2 数据/可识别性错误，3 数值失败。
"""

import os
import sys
import argparse
import logging
from typing import Any, Dict, List, Optional

import json5
import numpy as np
import pandas as pd

from config import config
from models import EstimationSpec, METHOD_ALIASES, METHOD_KS, METHOD_KS_L1
from services.csv_manager import CSVManager
from services.dataset import export_csv, load_csv
from services.estimation import fit_design, prepare_design
from services.evaluation import EvaluationCollector, over_time_frame, recovery_frame, report_frame
from services.inference import block_bootstrap, compute_prediction_errors, prediction_frame, quantile_frame
from services.ks_estimator import select_bandwidth
from services.simulation import preset_truth, simulate_tv_var, structure_summary
from utils.errors import ConfigError, TvvarError
from utils.model_store import ModelStore, build_metadata
from utils.parallel import spawn_seeds

logger = logging.getLogger(__name__)

METHOD_CHOICES = list(METHOD_ALIASES)

COMMON_OPTIONS = {
    'config': {'flags': ['--config'], 'type': str, 'default': None, 'metavar': 'PATH',
               'help': 'JSON配置文件（键名同本表）', 'file': False},
    'seed': {'flags': ['--seed'], 'type': int, 'default': config.DEFAULT_SEED, 'help': '随机种子'},
    'threads': {'flags': ['--threads'], 'type': int, 'default': config.DEFAULT_THREADS,
                'help': '最大工作线程数'},
}

DATA_OPTIONS = {
    'data': {'flags': ['--data'], 'type': str, 'required': True, 'metavar': 'CSV', 'help': '输入数据CSV'},
    'columns': {'flags': ['--columns'], 'type': str, 'nargs': '+', 'default': None,
                'help': '数值变量列（缺省为除时间/beep/day外的全部列）'},
    'time_col': {'flags': ['--time-col'], 'type': str, 'default': None, 'help': '归一化时间戳列'},
    'beep_col': {'flags': ['--beep-col'], 'type': str, 'default': None, 'help': '当天提示序号列'},
    'day_col': {'flags': ['--day-col'], 'type': str, 'default': None, 'help': '日期序号列'},
}

ESTIMATION_OPTIONS = {
    'method': {'flags': ['--method'], 'type': str, 'choices': METHOD_CHOICES, 'required': True, 'help': '估计方法'},
    'lags': {'flags': ['--lags'], 'type': int, 'nargs': '+', 'default': [1], 'help': '滞后阶集合'},
    'estpoints': {'flags': ['--estpoints'], 'type': int, 'default': config.DEFAULT_EST_POINTS,
                  'help': '[0,1]上等距估计点个数'},
    'bandwidth': {'flags': ['--bandwidth'], 'type': float, 'default': None, 'help': '核带宽（ks、ks-l1）'},
    'k': {'flags': ['--k'], 'type': int, 'default': None, 'help': '样条基函数个数（缺省自动选择）'},
    'k_max': {'flags': ['--k-max'], 'type': int, 'default': config.K_MAX, 'help': '自动选择k时的上限'},
    'level': {'flags': ['--level'], 'type': float, 'default': config.CREDIBLE_LEVEL,
              'help': '可信带水平（gam-st阈值化）'},
    'standardize': {'flags': ['--standardize'], 'action': argparse.BooleanOptionalAction, 'default': True,
                    'help': '是否标准化变量'},
    'lambda_folds': {'flags': ['--lambda-folds'], 'type': int, 'default': config.LAMBDA_CV_FOLDS,
                     'help': 'λ交叉验证折数'},
}

COMMAND_OPTIONS: Dict[str, Dict[str, Dict[str, Any]]] = {
    'simulate': {
        **COMMON_OPTIONS,
        'preset': {'flags': ['--preset'], 'type': str, 'choices': list(config.SIM_PRESETS), 'default': 'sim-a',
                   'help': '仿真预设'},
        'n': {'flags': ['--n'], 'type': int, 'required': True, 'help': '时间序列长度'},
        'theta': {'flags': ['--theta'], 'type': float, 'default': config.SIM_THETA, 'help': '参数最大幅度θ'},
        'noise_variance': {'flags': ['--noise-variance'], 'type': float, 'default': config.SIM_NOISE_VARIANCE,
                           'help': '噪声方差σ²'},
        'output': {'flags': ['--output'], 'type': str, 'required': True, 'metavar': 'CSV', 'help': '数据输出路径'},
        'truth': {'flags': ['--truth'], 'type': str, 'required': True, 'metavar': 'JSON', 'help': '真值输出路径'},
    },
    'fit': {
        **COMMON_OPTIONS,
        **DATA_OPTIONS,
        **ESTIMATION_OPTIONS,
        'bwselect': {'flags': ['--bwselect'], 'action': 'store_true', 'default': False,
                     'help': '未给带宽时先做带宽选择'},
        'grid': {'flags': ['--grid'], 'type': float, 'nargs': '+', 'default': None, 'help': '候选带宽'},
        'output': {'flags': ['--output'], 'type': str, 'required': True, 'metavar': 'JSON', 'help': '模型输出路径'},
        'plots': {'flags': ['--plots'], 'type': str, 'default': None, 'metavar': 'DIR', 'help': 'SVG图输出目录'},
    },
    'bwselect': {
        **COMMON_OPTIONS,
        **DATA_OPTIONS,
        'method': {'flags': ['--method'], 'type': str, 'choices': ['ks', 'ks-l1'], 'default': 'ks-l1',
                   'help': '核估计方法'},
        'lags': ESTIMATION_OPTIONS['lags'],
        'standardize': ESTIMATION_OPTIONS['standardize'],
        'lambda_folds': ESTIMATION_OPTIONS['lambda_folds'],
        'grid': {'flags': ['--grid'], 'type': float, 'nargs': '+', 'default': None,
                 'help': '候选带宽（缺省为[0.01, 1]上10个等距值）'},
        'bw_folds': {'flags': ['--bw-folds'], 'type': int, 'default': config.DEFAULT_BW_FOLDS, 'help': '折数'},
        'foldsize': {'flags': ['--foldsize'], 'type': int, 'default': None,
                     'help': '测试集大小（缺省 ⌈(0.2n)^{2/3}⌉）'},
        'output': {'flags': ['--output'], 'type': str, 'required': True, 'metavar': 'CSV', 'help': '误差表输出路径'},
        'plots': {'flags': ['--plots'], 'type': str, 'default': None, 'metavar': 'DIR', 'help': 'SVG图输出目录'},
    },
    'resample': {
        **COMMON_OPTIONS,
        **DATA_OPTIONS,
        **ESTIMATION_OPTIONS,
        'nB': {'flags': ['--nB'], 'type': int, 'default': config.BOOTSTRAP_NB, 'help': 'bootstrap重复次数'},
        'blocks': {'flags': ['--blocks'], 'type': int, 'default': config.BOOTSTRAP_BLOCKS, 'help': '块数'},
        'seeds': {'flags': ['--seeds'], 'type': int, 'nargs': '+', 'default': None,
                  'help': '每个重复样本的种子（缺省由--seed派生）'},
        'quantiles': {'flags': ['--quantiles'], 'type': float, 'nargs': '+', 'default': config.BOOTSTRAP_QUANTILES,
                      'help': '分位数概率'},
        'output': {'flags': ['--output'], 'type': str, 'required': True, 'metavar': 'JSON',
                   'help': 'bootstrap分布输出路径'},
        'quantile_csv': {'flags': ['--quantile-csv'], 'type': str, 'default': None, 'metavar': 'CSV',
                         'help': '分位数长表输出路径'},
    },
    'predict': {
        **COMMON_OPTIONS,
        **DATA_OPTIONS,
        'model': {'flags': ['--model'], 'type': str, 'required': True, 'metavar': 'JSON', 'help': '模型文件'},
        'tv_method': {'flags': ['--tv-method'], 'type': str, 'nargs': '+', 'choices': ['weighted', 'closest'],
                      'default': ['weighted'], 'help': '估计点预测的组合方式'},
        'output': {'flags': ['--output'], 'type': str, 'required': True, 'metavar': 'CSV', 'help': '误差表输出路径'},
        'tv_output': {'flags': ['--tv-output'], 'type': str, 'default': None, 'metavar': 'CSV',
                      'help': '逐估计点误差长表输出路径'},
        'json': {'flags': ['--json'], 'type': str, 'default': None, 'metavar': 'JSON',
                 'help': '预测误差报告JSON路径（多个组合方式时按方式加后缀）'},
    },
    'evaluate': {
        **COMMON_OPTIONS,
        'models': {'flags': ['--models'], 'type': str, 'nargs': '+', 'required': True, 'help': '模型文件列表'},
        'truths': {'flags': ['--truths'], 'type': str, 'nargs': '+', 'required': True,
                   'help': '与模型一一对应的真值文件列表'},
        'probs': {'flags': ['--probs'], 'type': float, 'nargs': '+', 'default': None, 'help': '分位数概率'},
        'quantile_preset': {'flags': ['--quantile-preset'], 'type': str,
                            'choices': list(config.EVAL_QUANTILE_PRESETS), 'default': 'iqr',
                            'help': '分位数预设（未给--probs时使用）'},
        'zero_tol': {'flags': ['--zero-tol'], 'type': float, 'default': 0.0, 'help': '视为零估计的阈值'},
        'output': {'flags': ['--output'], 'type': str, 'required': True, 'metavar': 'CSV', 'help': '评估长表输出路径'},
        'json': {'flags': ['--json'], 'type': str, 'default': None, 'metavar': 'JSON', 'help': '评估报告JSON路径'},
        'plots': {'flags': ['--plots'], 'type': str, 'default': None, 'metavar': 'DIR', 'help': 'SVG图输出目录'},
    },
}

COMMAND_HELP = {
    'simulate': '生成仿真真值与数据',
    'fit': '估计时变VAR模型',
    'bwselect': '按时间分层交叉验证选择带宽',
    'resample': '块bootstrap抽样分布',
    'predict': '节点预测误差 (R2, RMSE)',
    'evaluate': '对照真值评估估计误差与结构恢复',
}


class ToolArgumentParser(argparse.ArgumentParser):
    """用法错误抛出ConfigError而不是直接退出"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _option_help(key: str, option: Dict[str, Any]) -> str:
    text = option.get('help', '')
    if option.get('file', True):
        text += f" [配置键: {key}]"
    if option.get('required'):
        text += ' (必需)'
    elif option.get('default') is not None:
        text += f" (默认: {option['default']})"
    return text


def build_parser() -> ToolArgumentParser:
    """由参数表生成命令行解析器"""
    parser = ToolArgumentParser(prog=config.TOOL_NAME, description='时变VAR模型估计工具包')
    parser.add_argument('--version', action='version', version=f"{config.TOOL_NAME} {config.TOOL_VERSION}")
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True

    for command, table in COMMAND_OPTIONS.items():
        sub = subparsers.add_parser(command, help=COMMAND_HELP[command], description=COMMAND_HELP[command],
                                    argument_default=argparse.SUPPRESS)
        for key, option in table.items():
            kwargs = {name: option[name] for name in ('type', 'nargs', 'choices', 'action', 'metavar')
                      if name in option}
            if option.get('action') in ('store_true', argparse.BooleanOptionalAction):
                kwargs.pop('type', None)
            sub.add_argument(*option['flags'], dest=key, help=_option_help(key, option), **kwargs)
    return parser


def _coerce(key: str, option: Dict[str, Any], value: Any) -> Any:
    """把配置文件中的值按参数表校验并转换类型"""
    action = option.get('action')
    if action in ('store_true', argparse.BooleanOptionalAction):
        if not isinstance(value, bool):
            raise ConfigError(f"配置键 {key} 必须为布尔值")
        return value
    if value is None:
        return None
    convert = option.get('type', str)
    try:
        if 'nargs' in option:
            if not isinstance(value, list):
                raise ConfigError(f"配置键 {key} 必须为列表")
            converted = [convert(v) for v in value]
        else:
            converted = convert(value)
    except (TypeError, ValueError):
        raise ConfigError(f"配置键 {key} 的值无效: {value!r}")
    choices = option.get('choices')
    if choices is not None:
        for item in converted if isinstance(converted, list) else [converted]:
            if item not in choices:
                raise ConfigError(f"配置键 {key} 的取值 {item!r} 不在 {choices} 中")
    return converted


def load_config_file(path: str, command: str) -> Dict[str, Any]:
    """读取JSON配置文件并按参数表校验（未知键拒绝）"""
    if not os.path.exists(path):
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json5.load(f)
    except ValueError as e:
        raise ConfigError(f"配置文件解析失败 {path}: {str(e)}")
    if not isinstance(document, dict):
        raise ConfigError("配置文件顶层必须是对象")

    table = COMMAND_OPTIONS[command]
    allowed = {key for key, option in table.items() if option.get('file', True)}
    unknown = sorted(set(document) - allowed)
    if unknown:
        raise ConfigError(f"配置文件含有未知键: {', '.join(unknown)}")
    return {key: _coerce(key, table[key], value) for key, value in document.items()}


def resolve_settings(command: str, args: argparse.Namespace) -> Dict[str, Any]:
    """合并默认值、配置文件与命令行参数，并检查必需项"""
    table = COMMAND_OPTIONS[command]
    settings = {key: option.get('default') for key, option in table.items()}
    provided = {key: value for key, value in vars(args).items() if key in table}
    if provided.get('config'):
        settings.update(load_config_file(provided['config'], command))
    settings.update(provided)

    missing = [table[key]['flags'][0] for key, option in table.items()
               if option.get('required') and settings.get(key) is None]
    if missing:
        raise ConfigError(f"{command} 缺少必需参数: {', '.join(missing)}")
    return settings


def _metadata(command: str, settings: Dict[str, Any]) -> Dict[str, Any]:
    recorded = {key: value for key, value in settings.items() if key not in ('threads', 'config')}
    return build_metadata(command, settings.get('seed'), recorded)


def _roles(settings: Dict[str, Any]) -> Dict[str, Any]:
    return {
        'values': settings.get('columns'),
        'time': settings.get('time_col'),
        'beep': settings.get('beep_col'),
        'day': settings.get('day_col'),
    }


def _estimation_spec(settings: Dict[str, Any]) -> EstimationSpec:
    return EstimationSpec(
        method=settings['method'],
        lags=list(settings['lags']),
        n_est_points=settings['estpoints'],
        bandwidth=settings.get('bandwidth'),
        k=settings.get('k'),
        k_max=settings['k_max'],
        level=settings['level'],
        standardize=settings['standardize'],
        folds=settings['lambda_folds'],
        seed=settings['seed'],
    )


def _plot_path(directory: str, name: str) -> str:
    return os.path.join(directory, name)


def cmd_simulate(settings: Dict[str, Any]) -> int:
    """生成仿真真值与数据集"""
    truth_seed, data_seed = spawn_seeds(settings['seed'], 2)
    sigma = float(np.sqrt(settings['noise_variance']))
    truth = preset_truth(settings['preset'], settings['n'], seed=truth_seed,
                         theta=settings['theta'], sigma=sigma)
    data = simulate_tv_var(truth, seed=data_seed)
    metadata = _metadata('simulate', settings)

    export_csv(data, settings['output'], metadata=metadata)
    ModelStore().save_truth(truth, settings['truth'], metadata=metadata)

    summary = structure_summary(truth)
    logger.info(f"仿真信噪比 θ/σ² = {truth.theta / sigma ** 2:.3f}")
    print(f"Redraws: {truth.redraws}")
    print(f"Edge density: {summary['density']:.3f} ({summary['n_edges']} / {summary['p'] ** 2 - summary['p']})")
    print(f"Mean indegree: {summary['mean_indegree']:.2f}")
    print(f"Data written to {settings['output']}, truth written to {settings['truth']}")
    return 0


def cmd_fit(settings: Dict[str, Any]) -> int:
    """估计时变VAR模型"""
    data = load_csv(settings['data'], _roles(settings))
    spec = _estimation_spec(settings)
    design = prepare_design(data, spec)
    print(design.summary_line())

    if spec.method in (METHOD_KS, METHOD_KS_L1) and spec.bandwidth is None:
        if not settings['bwselect']:
            raise ConfigError(f"方法 {settings['method']} 需要 --bandwidth 或 --bwselect")
        grid = settings['grid'] or np.linspace(0.01, 1.0, config.CLI_BANDWIDTH_GRID_SIZE)
        selection = select_bandwidth(design, grid, regularized=spec.method == METHOD_KS_L1,
                                     seed=spec.seed, threads=settings['threads'])
        spec.bandwidth = selection.b_hat
        print(f"Selected bandwidth: {selection.b_hat:g}")

    model = fit_design(design, spec, threads=settings['threads'])
    ModelStore().save_model(model, settings['output'], metadata=_metadata('fit', settings))

    if settings['plots']:
        from services.plotting import plot_heatmap, plot_trajectories
        plot_trajectories(model, _plot_path(settings['plots'], 'trajectories.svg'))
        plot_heatmap(model, _plot_path(settings['plots'], 'heatmap.svg'))
    print(f"Model ({model.method}, {model.n_est} estimation points) written to {settings['output']}")
    return 0


def cmd_bwselect(settings: Dict[str, Any]) -> int:
    """带宽选择"""
    data = load_csv(settings['data'], _roles(settings))
    method = METHOD_ALIASES[settings['method']]
    spec = EstimationSpec(method=method, lags=list(settings['lags']), standardize=settings['standardize'],
                          folds=settings['lambda_folds'], seed=settings['seed'])
    design = prepare_design(data, spec)
    print(design.summary_line())

    grid = settings['grid'] or np.linspace(0.01, 1.0, config.CLI_BANDWIDTH_GRID_SIZE)
    selection = select_bandwidth(design, grid, folds=settings['bw_folds'], foldsize=settings['foldsize'],
                                 regularized=method == METHOD_KS_L1, seed=settings['seed'],
                                 threads=settings['threads'])

    frame = pd.DataFrame.from_records(selection.to_frame_rows())
    CSVManager().write_table(frame, settings['output'], metadata=_metadata('bwselect', settings))
    if settings['plots']:
        from services.plotting import plot_bandwidth_errors
        plot_bandwidth_errors(selection.candidates, selection.errors,
                              _plot_path(settings['plots'], 'bandwidth_errors.svg'))

    print(f"Selected bandwidth: {selection.b_hat:g}")
    if selection.at_endpoint:
        print("Warning: the selected bandwidth is an endpoint of the candidate grid; "
              "another search should be conducted", file=sys.stderr)
    return 0


def cmd_resample(settings: Dict[str, Any]) -> int:
    """块bootstrap"""
    data = load_csv(settings['data'], _roles(settings))
    spec = _estimation_spec(settings)
    distribution = block_bootstrap(data, spec, nB=settings['nB'], blocks=settings['blocks'],
                                   seeds=settings['seeds'], quantiles=settings['quantiles'],
                                   threads=settings['threads'])
    metadata = _metadata('resample', settings)
    ModelStore().save_object('bootstrap', distribution, settings['output'], metadata=metadata)
    if settings['quantile_csv']:
        CSVManager().write_table(quantile_frame(distribution), settings['quantile_csv'], metadata=metadata)
    print(f"Bootstrap replicates: {distribution.nB} (failed: {len(distribution.failed_seeds)}), "
          f"blocks: {distribution.blocks}")
    print("Note: quantiles summarize sampling variability of the estimator; "
          "they are not confidence intervals around the true parameters")
    return 0


def cmd_predict(settings: Dict[str, Any]) -> int:
    """节点预测误差"""
    model = ModelStore().load_model(settings['model'])
    data = load_csv(settings['data'], _roles(settings))
    reports = [compute_prediction_errors(model, data, method) for method in settings['tv_method']]
    metadata = _metadata('predict', settings)
    manager = CSVManager()
    manager.write_table(prediction_frame(reports), settings['output'], metadata=metadata)

    if settings['tv_output']:
        records = []
        for report in reports:
            for i, label in enumerate(report.labels):
                for e, t_e in enumerate(report.est_points):
                    records.append({'Variable': label, 'method': report.method, 'est_point': float(t_e),
                                    'RMSE': float(report.tv_rmse[i, e]), 'R2': float(report.tv_r2[i, e])})
        manager.write_table(pd.DataFrame.from_records(records), settings['tv_output'], metadata=metadata)

    if settings['json']:
        store = ModelStore()
        root, ext = os.path.splitext(settings['json'])
        for report in reports:
            path = settings['json'] if len(reports) == 1 else f"{root}_{report.method}{ext or '.json'}"
            store.save_object('prediction_errors', report, path, metadata=metadata)

    for report in reports:
        print(f"[{report.method}]")
        print(report.format_table())
    return 0


def cmd_evaluate(settings: Dict[str, Any]) -> int:
    """对照真值评估"""
    model_paths: List[str] = settings['models']
    truth_paths: List[str] = settings['truths']
    if not model_paths:
        raise ConfigError("模型文件列表为空")
    if len(model_paths) != len(truth_paths):
        raise ConfigError(f"模型文件 ({len(model_paths)}) 与真值文件 ({len(truth_paths)}) 数量不一致")

    probs = settings['probs'] or config.EVAL_QUANTILE_PRESETS[settings['quantile_preset']]
    store = ModelStore()
    collector = EvaluationCollector(probs=probs, zero_tol=settings['zero_tol'])
    for model_path, truth_path in zip(model_paths, truth_paths):
        model = store.load_model(model_path)
        truth = store.load_truth(truth_path)
        collector.add(model.method, truth.n, model, truth)
    report = collector.report()

    metadata = _metadata('evaluate', settings)
    manager = CSVManager()
    manager.write_table(report_frame(report), settings['output'], metadata=metadata)
    root, ext = os.path.splitext(settings['output'])
    manager.write_table(recovery_frame(report), f"{root}_recovery{ext or '.csv'}", metadata=metadata)
    manager.write_table(over_time_frame(report), f"{root}_over_time{ext or '.csv'}", metadata=metadata)
    if settings['json']:
        store.save_object('evaluation', report, settings['json'], metadata=metadata)
    if settings['plots']:
        from services.plotting import plot_error_by_n, plot_recovery
        plot_error_by_n(report, _plot_path(settings['plots'], 'error_by_n.svg'))
        plot_recovery(report, _plot_path(settings['plots'], 'recovery.svg'))

    for row in report.recovery:
        precision = 'undefined' if row['precision'] is None else f"{row['precision']:.3f}"
        dense = ' (dense estimator)' if row['dense'] else ''
        print(f"{row['method']} n={row['n']}: sensitivity {row['sensitivity']:.3f}, precision {precision}{dense}")
    print(f"Evaluation of {len(collector)} fits written to {settings['output']}")
    return 0


COMMANDS = {
    'simulate': cmd_simulate,
    'fit': cmd_fit,
    'bwselect': cmd_bwselect,
    'resample': cmd_resample,
    'predict': cmd_predict,
    'evaluate': cmd_evaluate,
}


def setup_logging():
    """配置日志：终端输出到stderr，配置了日志文件时同时写文件"""
    handlers = [logging.StreamHandler(sys.stderr)]
    if config.LOG_FILE_PATH:
        handlers.append(logging.FileHandler(config.LOG_FILE_PATH, encoding='utf-8'))
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """命令行主函数，返回退出码"""
    setup_logging()
    try:
        config.validate_config()
        args = build_parser().parse_args(argv)
        settings = resolve_settings(args.command, args)
        return COMMANDS[args.command](settings)
    except TvvarError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        print(f"Error: {str(e)}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        logger.error(f"配置错误: {str(e)}")
        print(f"Error: {str(e)}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == '__main__':
    sys.exit(main())
