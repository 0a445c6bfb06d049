# -*- coding: utf-8 -*-
"""
tvvar时变VAR估计工具包 - 并行任务工具
按任务派生独立随机种子，结果顺序与调度无关
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

from config import config

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def spawn_seeds(seed: Optional[int], count: int) -> List[int]:
    """从一个种子派生count个互相独立的整数种子"""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def run_tasks(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """
    执行一组互相独立的任务

    Args:
        func: 任务函数
        items: 任务参数
        threads: 最大工作线程数，None时使用配置默认值，1时串行执行

    Returns:
        List: 与items顺序一致的结果列表
    """
    items = list(items)
    workers = config.DEFAULT_THREADS if threads is None else int(threads)
    workers = max(1, min(workers, len(items)))

    if workers == 1:
        return [func(item) for item in items]

    logger.debug(f"并行执行 {len(items)} 个任务, 线程数: {workers}")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))
