"""
实验注册表：把实验类型名绑定到执行函数，引擎按名字分派
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import logging
from typing import Callable, Dict, Tuple

logger = logging.getLogger(__name__)


class ExperimentRegistry:
    """
    实验注册表，用于把实验类型绑定到某个执行函数，运行时按类型名调用
    与指令管理不同，执行出错时记录后原样抛出，由命令行入口决定退出码
    """

    def __init__(self):
        self._runners: Dict[str, Callable] = {}
        self._desc: Dict[str, str] = {}

    def reg(self, kind: str, func: Callable, desc: str = "无具体描述"):
        """
        注册实验类型
        """
        if kind in self._runners:
            logger.debug("实验类型 %s 被重新注册", kind)
        self._runners[kind] = func
        self._desc[kind] = desc

    def is_exist_func(self, kind: str) -> bool:
        return kind in self._runners

    def run(self, kind: str, *args, **kwargs):
        """
        运行实验
        """
        if not self.is_exist_func(kind):
            raise KeyError(f"实验类型 {kind} 未注册")
        try:
            return self._runners[kind](*args, **kwargs)
        except Exception:
            logger.error("实验 %s 执行时出错", kind)
            raise

    def list_kinds(self) -> Tuple[Tuple[str, str], ...]:
        """
        列出所有实验类型及描述
        """
        return tuple((kind, self._desc[kind]) for kind in self._runners)


exp_manager = ExperimentRegistry()
