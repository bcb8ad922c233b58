"""
异常体系
配置错误对应退出码2，数值失败对应退出码3
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
from typing import Optional


class WeylQEDError(Exception):
    """本项目所有可预期错误的基类"""

    exit_code = 1


class ConfigError(WeylQEDError):
    """
    配置文件错误（未知键、类型错误、语法错误等）
    :param line: 出错键所在行号（从1开始），未知时为None
    :param source: 配置文件名
    """

    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None,
                 source: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.source = source

    def __str__(self):
        where = self.source or "<config>"
        if self.line is not None:
            return f"{where}:{self.line}: {self.message}"
        if self.source:
            return f"{where}: {self.message}"
        return self.message


class NumericalError(WeylQEDError):
    """数值计算失败或结果被标记为不可信"""

    exit_code = 3


class PoleOnContourError(NumericalError):
    """η=0 时能量恰好落在格点本征值上"""


class NoBoundStateError(NumericalError):
    """久期方程在搜索区间内没有变号"""


class UnphysicalResidueError(NumericalError):
    """自能斜率 ≥ 1，留数无物理意义"""


class PropagationError(NumericalError):
    """
    时间演化范数漂移超限
    附带切比雪夫展开的诊断信息
    """

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self):
        if not self.diagnostics:
            return super().__str__()
        details = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                            for k, v in self.diagnostics.items())
        return f"{super().__str__()} ({details})"
