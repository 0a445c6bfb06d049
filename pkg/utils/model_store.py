# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 结果存储
模型、bootstrap分布、预测误差报告、评估报告与仿真真值的JSON读写；
每个文件顶层带 metadata 对象（工具版本、命令、种子、配置哈希）
"""

import os
import json
import hashlib
import logging
from typing import Any, Dict, Optional, Tuple

from config import config
from models import (BootstrapDistribution, CoefficientArray, EvaluationReport,
                    PredictionErrorReport, TimeVaryingVarModel)
from utils.errors import DataError

logger = logging.getLogger(__name__)

# 文档类型 -> 模型类
DOCUMENT_TYPES = {
    'model': TimeVaryingVarModel,
    'bootstrap': BootstrapDistribution,
    'prediction_errors': PredictionErrorReport,
    'evaluation': EvaluationReport,
    'truth': CoefficientArray,
}


def config_hash(settings: Dict[str, Any]) -> str:
    """配置内容的短哈希（键排序后序列化）"""
    text = json.dumps(settings, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]


def build_metadata(command: str, seed: Optional[int], settings: Dict[str, Any]) -> Dict[str, Any]:
    """输出文件的元数据（不含时间戳，保证重复运行输出一致）"""
    return {
        'tool': config.TOOL_NAME,
        'version': config.TOOL_VERSION,
        'command': command,
        'seed': seed,
        'config_hash': config_hash(settings),
    }


class ModelStore:
    """JSON结果存储管理器"""

    def __init__(self, encoding: str = 'utf-8'):
        self.encoding = encoding

    def save(self, document_type: str, payload: Dict[str, Any], file_path: str,
             metadata: Optional[Dict[str, Any]] = None) -> str:
        """
        保存JSON文档

        Args:
            document_type: 文档类型（见 DOCUMENT_TYPES）
            payload: 对象的 to_dict() 结果
            file_path: 输出路径
            metadata: 元数据
        """
        if document_type not in DOCUMENT_TYPES:
            raise DataError(f"未知的文档类型: {document_type}")
        directory = os.path.dirname(file_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        document = {'metadata': dict(metadata or {}), 'type': document_type, document_type: payload}
        with open(file_path, 'w', encoding=self.encoding) as f:
            json.dump(document, f, ensure_ascii=False, indent=2)
            f.write('\n')
        logger.info(f"{document_type} 已保存: {file_path}")
        return file_path

    def load(self, file_path: str, document_type: Optional[str] = None) -> Tuple[Dict[str, Any], Dict[str, Any]]:
        """
        读取JSON文档

        Returns:
            (payload, metadata)
        """
        if not os.path.exists(file_path):
            raise DataError(f"文件不存在: {file_path}")
        try:
            with open(file_path, 'r', encoding=self.encoding) as f:
                document = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"无法读取JSON文件 {file_path}: {str(e)}")

        actual = document.get('type')
        if document_type is not None and actual != document_type:
            raise DataError(f"{file_path} 的文档类型为 {actual}, 需要 {document_type}")
        if actual not in DOCUMENT_TYPES or actual not in document:
            raise DataError(f"{file_path} 不是有效的结果文档")
        return document[actual], document.get('metadata', {})

    def save_object(self, document_type: str, obj, file_path: str,
                    metadata: Optional[Dict[str, Any]] = None) -> str:
        return self.save(document_type, obj.to_dict(), file_path, metadata)

    def load_object(self, document_type: str, file_path: str):
        payload, _ = self.load(file_path, document_type)
        return DOCUMENT_TYPES[document_type].from_dict(payload)

    def save_model(self, model: TimeVaryingVarModel, file_path: str, metadata: Optional[Dict[str, Any]] = None) -> str:
        return self.save_object('model', model, file_path, metadata)

    def load_model(self, file_path: str) -> TimeVaryingVarModel:
        return self.load_object('model', file_path)

    def save_truth(self, truth: CoefficientArray, file_path: str, metadata: Optional[Dict[str, Any]] = None) -> str:
        payload = truth.to_dict()
        payload['steepness'] = config.SIM_SIGMOID_STEEPNESS
        return self.save('truth', payload, file_path, metadata)

    def load_truth(self, file_path: str) -> CoefficientArray:
        payload, _ = self.load(file_path, 'truth')
        return CoefficientArray.from_dict(payload, steepness=payload.get('steepness', config.SIM_SIGMOID_STEEPNESS))
