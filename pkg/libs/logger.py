"""
日志拓展
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
from functools import wraps
import logging
import logging.handlers
import os
import sys

from rich.logging import RichHandler

from libs.animes_rich import console

LOG_FILE_NAME = "weylqed.log"
_initialized = False


def init_global_logger(log_dir: str = "logs", level: int = logging.INFO,
                       verbose: bool = False):
    """
    初始化全局日志系统：
    - 日志文件路径：<log_dir>/weylqed.log
    - 轮转策略：按文件大小轮转（50MB/个，保留5个备份）
    - verbose 时额外挂一个 rich 控制台输出
    重复调用不会重复挂载handler
    """
    global _initialized  # pylint: disable=global-statement
    root_logger = logging.getLogger()
    if _initialized:
        root_logger.setLevel(level)
        return root_logger

    os.makedirs(log_dir, exist_ok=True)

    log_format = logging.Formatter(
        '[%(asctime)s] [%(process)d:%(thread)d] [%(levelname)s] '
        '[%(module)s:%(funcName)s:%(lineno)d] - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    root_logger.setLevel(level)

    if verbose:
        console_handler = RichHandler(console=console, show_path=False,
                                      rich_tracebacks=True)
        console_handler.setLevel(level)
        root_logger.addHandler(console_handler)

    log_file = os.path.join(log_dir, LOG_FILE_NAME)
    file_handler = logging.handlers.RotatingFileHandler(
        log_file,
        maxBytes=50 * 1024 * 1024,  # 50MB
        backupCount=5,
        encoding='utf-8'
    )
    file_handler.setLevel(level)
    file_handler.setFormatter(log_format)
    root_logger.addHandler(file_handler)

    # 未捕获异常也落盘
    def handle_uncaught_exception(exc_type, exc_value, exc_traceback):
        if issubclass(exc_type, KeyboardInterrupt):
            sys.__excepthook__(exc_type, exc_value, exc_traceback)
            return
        root_logger.critical(
            "未捕获的全局异常",
            exc_info=(exc_type, exc_value, exc_traceback)
        )

    sys.excepthook = handle_uncaught_exception
    _initialized = True
    return root_logger


def log_exceptions(logger=None):
    """
    装饰器：捕获函数内的所有异常，记录到日志，并原样抛出
    :param logger: 日志器（默认使用本模块日志器）
    """
    if logger is None:
        logger = logging.getLogger(__name__)

    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except Exception:
                logger.error(
                    "函数 %s 执行时出错",
                    func.__name__,
                    exc_info=True
                )
                raise
        return wrapper
    return decorator
