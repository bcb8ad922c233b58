"""
rich 控制台展示：标题、进度提示、表格
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
from contextlib import contextmanager
from typing import Iterable, Mapping

from rich.console import Console
from rich.panel import Panel
from rich.align import Align
from rich.table import Table


console = Console()


def show_title(version: str):
    """打印程序标题面板"""
    art = "\n".join([
        "[#4488FF]░██       ░██ ░██    ░██ ░██[/#4488FF]   [#CC66CC]░██████   ░████████ ░███████ [/#CC66CC]",
        "[#4488FF]░██  ░██  ░██  ░██  ░██  ░██[/#4488FF]   [#CC66CC]░██  ░██  ░██       ░██   ░██[/#CC66CC]",
        "[#4488FF] ░██░████░██    ░████    ░██[/#4488FF]   [#CC66CC]░██  ░██  ░███████  ░██   ░██[/#CC66CC]",
        "[#4488FF]  ░███  ░███     ░██     ░██████[/#4488FF][#CC66CC]░███████ ░████████ ░███████ [/#CC66CC]",
        f"[dim]Weyl 光子晶格中的量子发射体  v{version}[/dim]",
    ])
    console.print(Panel(Align.center(art), border_style="blue"))


@contextmanager
def status(message: str):
    """
    长计算时显示转圈提示
    非交互终端下 rich 会自动退化为普通输出
    """
    with console.status(f"[bold cyan]{message}[/bold cyan]", spinner="dots"):
        yield


def show_catalog(rows: Iterable[tuple]):
    """打印内置配方目录 (名称, 实验类型, 描述)"""
    table = Table(title="内置配方", show_lines=False)
    table.add_column("recipe", style="bold green")
    table.add_column("experiment", style="cyan")
    table.add_column("description")
    for name, kind, desc in rows:
        table.add_row(name, kind, desc)
    console.print(table)


def show_summary(title: str, summary: Mapping):
    """打印实验摘要，嵌套结构只展示顶层标量"""
    table = Table(title=title)
    table.add_column("key", style="bold")
    table.add_column("value")
    for key, value in summary.items():
        if isinstance(value, float):
            table.add_row(str(key), f"{value:.6g}")
        elif isinstance(value, (int, str, bool)) or value is None:
            table.add_row(str(key), str(value))
        else:
            table.add_row(str(key), f"[dim]<{type(value).__name__}>[/dim]")
    console.print(table)


def show_kinds(rows: Iterable[tuple]):
    """打印已注册的实验类型 (类型, 描述)，配合 --config 使用"""
    table = Table(title="实验类型")
    table.add_column("experiment", style="cyan")
    table.add_column("description")
    for kind, desc in rows:
        table.add_row(kind, desc)
    console.print(table)
