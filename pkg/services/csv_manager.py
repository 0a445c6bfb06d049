# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - CSV文档管理器
负责时间序列数据的导入导出，以及带元数据注释头的长表输出
"""

import os
import logging
from typing import Dict, List, Optional, Any

import numpy as np
import pandas as pd

from config import config
from models import TimeSeriesDataset
from utils.errors import DataError

logger = logging.getLogger(__name__)


class CSVManager:
    """CSV文档管理器"""

    def __init__(self, encoding: str = None, missing_tokens: List[str] = None):
        """
        初始化CSV管理器

        Args:
            encoding: 文件编码
            missing_tokens: 视为缺失值的单元格内容
        """
        self.encoding = encoding or config.CSV_ENCODING
        self.missing_tokens = list(missing_tokens if missing_tokens is not None else config.CSV_MISSING_TOKENS)

    def read_dataset(self, file_path: str, roles: Dict[str, Any]) -> TimeSeriesDataset:
        """
        读取时间序列CSV

        Args:
            file_path: CSV文件路径（UTF-8，逗号分隔，需表头）
            roles: 列角色映射 {'values': [...], 'time': 列名, 'beep': 列名, 'day': 列名}；
                   values缺省时使用除时间/beep/day以外的全部列

        Returns:
            TimeSeriesDataset: 绑定了列角色的数据集
        """
        if not os.path.exists(file_path):
            raise DataError(f"文件不存在: {file_path}")

        try:
            frame = pd.read_csv(
                file_path,
                dtype=str,
                keep_default_na=False,
                encoding=self.encoding,
                skiprows=self.header_length(file_path),
            )
        except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataError(f"无法读取CSV文件 {file_path}: {str(e)}")

        time_col = roles.get('time')
        beep_col = roles.get('beep')
        day_col = roles.get('day')
        marker_cols = [c for c in (time_col, beep_col, day_col) if c]
        value_cols = roles.get('values') or [c for c in frame.columns if c not in marker_cols]

        missing = [c for c in list(value_cols) + marker_cols if c not in frame.columns]
        if missing:
            raise DataError(f"CSV中缺少列: {', '.join(missing)}")
        if not value_cols:
            raise DataError("没有可用的数值列")

        values = np.column_stack([self._parse_column(frame[c], c, allow_missing=True) for c in value_cols])
        time_norm = self._parse_column(frame[time_col], time_col) if time_col else None
        beep = self._parse_marker(frame[beep_col], beep_col) if beep_col else None
        day = self._parse_marker(frame[day_col], day_col) if day_col else None

        dataset = TimeSeriesDataset(values=values, labels=list(value_cols),
                                    time_norm=time_norm, beep=beep, day=day)
        logger.info(f"CSV读取成功: {file_path}, 行数: {dataset.n}, 变量数: {dataset.p}, "
                    f"缺失单元格: {int(np.isnan(values).sum())}")
        return dataset

    def _parse_column(self, column: pd.Series, name: str, allow_missing: bool = False) -> np.ndarray:
        """把字符串列解析为浮点数，缺失标记转为NaN"""
        text = column.str.strip()
        is_missing = text.isin(self.missing_tokens)
        if is_missing.any() and not allow_missing:
            raise DataError(f"列 {name} 不允许缺失值")
        parsed = pd.to_numeric(text.where(~is_missing), errors='coerce')
        bad = parsed.isna() & ~is_missing
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
            raise DataError(f"列 {name} 第 {row} 行含非数值内容: {column.iloc[row - 1]!r}")
        return parsed.to_numpy(dtype=float)

    def _parse_marker(self, column: pd.Series, name: str) -> np.ndarray:
        values = self._parse_column(column, name)
        if np.any(values != np.round(values)) or np.any(values < 1):
            raise DataError(f"列 {name} 必须全部为正整数")
        return values.astype(np.int64)

    def write_dataset(self, dataset: TimeSeriesDataset, file_path: str,
                      metadata: Dict[str, Any] = None,
                      time_col: str = 'time_norm', beep_col: str = 'beepno', day_col: str = 'dayno') -> str:
        """导出数据集为CSV（缺失值写为NA）"""
        frame = pd.DataFrame(dataset.values, columns=dataset.labels)
        if dataset.time_norm is not None:
            frame[time_col] = dataset.time_norm
        if dataset.has_markers:
            frame[beep_col] = dataset.beep
            frame[day_col] = dataset.day
        return self.write_table(frame, file_path, metadata=metadata)

    def write_table(self, frame: pd.DataFrame, file_path: str,
                    metadata: Dict[str, Any] = None, float_format: str = '%.17g') -> str:
        """
        写出CSV表格，元数据作为 '#' 开头的注释行写在表头之前

        Returns:
            str: 写出的文件路径
        """
        directory = os.path.dirname(file_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        with open(file_path, 'w', newline='', encoding=self.encoding) as f:
            for key, value in (metadata or {}).items():
                f.write(f"# {key}: {value}\n")
            frame.to_csv(f, index=False, na_rep='NA', float_format=float_format, lineterminator='\n')

        logger.info(f"CSV写出成功: {file_path}, 记录数: {len(frame)}")
        return file_path

    def read_table(self, file_path: str) -> pd.DataFrame:
        """读取带注释头的CSV表格"""
        if not os.path.exists(file_path):
            raise DataError(f"文件不存在: {file_path}")
        return pd.read_csv(file_path, skiprows=self.header_length(file_path), encoding=self.encoding)

    def _leading_comments(self, file_path: str) -> List[str]:
        """文件开头连续的 '#' 注释行；表头之后的 '#' 按普通字符处理"""
        lines = []
        try:
            with open(file_path, 'r', encoding=self.encoding) as f:
                for line in f:
                    if not line.startswith('#'):
                        break
                    lines.append(line)
        except (OSError, UnicodeDecodeError) as e:
            raise DataError(f"无法读取CSV文件 {file_path}: {str(e)}")
        return lines

    def header_length(self, file_path: str) -> int:
        return len(self._leading_comments(file_path))

    def read_metadata(self, file_path: str) -> Dict[str, str]:
        """读取CSV文件开头的元数据注释行"""
        metadata = {}
        for line in self._leading_comments(file_path):
            key, _, value = line[1:].strip().partition(':')
            metadata[key.strip()] = value.strip()
        return metadata
