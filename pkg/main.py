"""
命令行主程序
weylqed <experiment|recipe> [--config FILE] [--out DIR] [--jobs N] [--deterministic] [--verbose]
不带参数（或 list）时列出内置配方
退出码：0 成功，2 配置错误，3 数值失败
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import argparse
import logging
import sys
from typing import List, Optional, Tuple

from config import (EXPERIMENT_KINDS, LOG_DIR, VERSION, ExperimentConfig,
                    is_recipe, list_recipes, load_config, load_recipe)
from experiment_engine import ExperimentEngine, ResultManifest
from libs.animes_rich import console, show_catalog, show_kinds, show_summary, show_title
from libs.errors import ConfigError, NumericalError, WeylQEDError
from libs.event_manager import exp_manager
from libs.logger import init_global_logger

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weylqed",
        description="Weyl 光子晶格中量子发射体的数值实验",
    )
    parser.add_argument("target", nargs="?", default=None,
                        help=f"内置配方名，或实验类型（{', '.join(EXPERIMENT_KINDS)}），或 list")
    parser.add_argument("--config", "-c", default=None, help="TOML 实验配置文件")
    parser.add_argument("--out", "-o", default=None, help="输出目录（覆盖配置中的 [output] dir）")
    parser.add_argument("--jobs", "-j", type=int, default=1, help="参数扫描的最大线程数")
    parser.add_argument("--deterministic", action="store_true",
                        help="浮点数以17位有效数字输出，重复运行逐字节一致")
    parser.add_argument("--verbose", "-v", action="store_true", help="在控制台显示日志")
    parser.add_argument("--version", action="version", version=f"weylqed {VERSION}")
    return parser


def list_experiments() -> List[Tuple[str, str, str]]:
    """打印内置配方目录与已注册的实验类型，返回配方 (名称, 实验类型, 描述)"""
    rows = list_recipes()
    show_catalog(rows)
    show_kinds(exp_manager.list_kinds())
    return rows


def resolve_config(target: Optional[str], config_path: Optional[str]) -> ExperimentConfig:
    """
    target 为配方名时直接加载配方；否则视为实验类型，与 --config 一起解析
    """
    if config_path:
        kind = target if target in EXPERIMENT_KINDS else None
        if target and kind is None:
            raise ConfigError(f"'{target}' 不是实验类型，不能与 --config 一起使用")
        return load_config(config_path, experiment=kind)
    if target and is_recipe(target):
        return load_recipe(target)
    if target in EXPERIMENT_KINDS:
        raise ConfigError(f"实验类型 '{target}' 需要 --config 指定配置文件")
    raise ConfigError(f"未知配方或实验类型 '{target}'")


def run(config: ExperimentConfig, out_dir: Optional[str] = None, jobs: int = 1,
        deterministic: bool = False) -> ResultManifest:
    return ExperimentEngine(config, out_dir=out_dir, jobs=jobs, deterministic=deterministic).run()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    init_global_logger(LOG_DIR, verbose=args.verbose)

    if args.config is None and args.target in (None, "list"):
        show_title(VERSION)
        try:
            list_experiments()
        except ConfigError as e:
            console.print(f"[bold red]配方目录损坏：{e}[/bold red]")
            return e.exit_code
        return 0

    try:
        cfg = resolve_config(args.target, args.config)
        manifest = run(cfg, out_dir=args.out, jobs=args.jobs, deterministic=args.deterministic)
    except ConfigError as e:
        logger.error("配置错误：%s", e)
        console.print(f"[bold red]配置错误[/bold red] {e}")
        return e.exit_code
    except NumericalError as e:
        logger.error("数值失败：%s", e)
        console.print(f"[bold red]数值失败[/bold red] {e}")
        return e.exit_code
    except WeylQEDError as e:
        logger.error("运行失败：%s", e)
        console.print(f"[bold red]运行失败[/bold red] {e}")
        return e.exit_code

    show_summary(f"{manifest.experiment} -> {manifest.out_dir}", manifest.summary)
    console.print(f"[green]已写出 {len(manifest.artifacts) + 1} 个文件，run_id {manifest.run_id}[/green]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
