"""
全局配置管理
包括路径、实验配置文件（TOML）的严格解析、内置配方目录
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import math
import os
import re
import sys
import tomllib
from dataclasses import dataclass, field, asdict, fields
from typing import Any, Dict, List, Optional, Tuple, Union

from libs.emitter_dynamics import EmitterSpec
from libs.errors import ConfigError
from libs.lattice_model import LatticeParams, sublattice_of

VERSION = "1.0.0"

if getattr(sys, 'frozen', False):
    # 打包后：exe所在目录
    root_path = os.path.dirname(os.path.abspath(sys.executable))
else:
    # 未打包：脚本所在目录，不受CWD影响
    root_path = os.path.dirname(os.path.abspath(__file__))

LOG_DIR = os.path.join(root_path, "logs")
CONFIG_DIR = os.path.join(root_path, "config")
RECIPE_DIR = os.path.join(CONFIG_DIR, "recipes")
DEFAULT_OUTPUT_DIR = "results"

EXPERIMENT_KINDS = ("bands", "dos", "dynamics", "boundstate", "spinbands",
                    "berry", "nodes", "residue", "exchange")
# 需要发射体的实验及其发射体个数（None 表示至少一个）
EMITTER_COUNTS = {"dynamics": None, "boundstate": 1, "exchange": 2}

RECIPES = (
    "fig1b", "fig1c", "fig1d", "fig1d_inset",
    "fig2a", "fig2b", "fig2c", "fig2d", "fig2e", "fig2f",
    "fig3",
    "fig4a", "fig4b", "fig4c", "fig4d", "fig4e", "fig4f",
    "nodes",
)


@dataclass
class NumericsConfig:
    """数值参数；所有能量以 J 为单位，长度以 a 为单位"""

    grid: int = 64               # 无限晶格近似的动量网格
    dos_grid: int = 64
    eta: float = 0.02            # 态密度高斯展宽
    bands_grid: int = 129
    t_max: float = 40.0
    dt_out: float = 0.1
    plateau_window: List[float] = field(default_factory=list)
    markov: bool = True
    fit_range: List[int] = field(default_factory=lambda: [2, 8])
    M_list: List[float] = field(default_factory=list)
    g: float = 0.1               # 自旋模型耦合（能带形状只差 g² 因子）
    s_list: List[float] = field(default_factory=lambda: [9])
    kx: float = 1.5707963267948966
    ky: float = 0.0
    n_points: int = 401
    berry_grid: int = 64
    node_scan: int = 32
    tol: float = 1e-6

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EmitterConfig:
    """detuning 可以是数值或 "critical"（运行时解析为 Δ_c(M)）"""

    site: Tuple[int, int, int]
    detuning: Union[float, str] = 0.0
    coupling: float = 0.5

    @property
    def critical(self) -> bool:
        return isinstance(self.detuning, str)

    def resolve(self, detuning: Optional[float] = None) -> EmitterSpec:
        if self.critical:
            if detuning is None:
                raise ValueError("critical 失谐需要先计算 Δ_c")
            return EmitterSpec(self.site, float(detuning), self.coupling)
        return EmitterSpec(self.site, float(self.detuning), self.coupling)

    def to_dict(self) -> dict:
        return {"site": list(self.site), "detuning": self.detuning, "coupling": self.coupling}


@dataclass
class ExperimentConfig:
    experiment: str
    lattice: LatticeParams = field(default_factory=LatticeParams)
    emitters: List[EmitterConfig] = field(default_factory=list)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    output_dir: str = DEFAULT_OUTPUT_DIR
    description: str = ""
    source: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "description": self.description,
            "lattice": self.lattice.to_dict(),
            "emitters": [em.to_dict() for em in self.emitters],
            "numerics": self.numerics.to_dict(),
            "output": {"dir": self.output_dir},
        }


# ---------------------------------------------------------------- 解析

_TOP_KEYS = ("experiment", "description", "lattice", "emitters", "numerics", "output")
_LATTICE_TYPES = {"J": "number", "M": "number", "a": "number", "L": "int", "boundary": "str"}
_EMITTER_KEYS = ("site", "detuning", "coupling")
_OUTPUT_KEYS = ("dir",)


def _numerics_types() -> Dict[str, str]:
    kinds = {}
    for f in fields(NumericsConfig):
        if f.name in ("plateau_window", "M_list", "s_list"):
            kinds[f.name] = "numbers"
        elif f.name == "fit_range":
            kinds[f.name] = "ints"
        else:
            kinds[f.name] = {"int": "int", "float": "number", "bool": "bool"}[
                f.type if isinstance(f.type, str) else f.type.__name__]
    return kinds


class _Locator:
    """在原始文本中定位键所在行（1 起）"""

    _header = re.compile(r"^\s*\[\[?\s*([A-Za-z0-9_.]+)\s*\]\]?")

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def key(self, key: str, section: Optional[str] = None, nth: int = 0) -> Optional[int]:
        current, seen = None, -1
        pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
        for i, line in enumerate(self.lines, start=1):
            m = self._header.match(line)
            if m:
                current = m.group(1)
                if current == section:
                    seen += 1
                continue
            if current == section and (section is None or seen == nth) and pattern.match(line):
                return i
        return None

    def section(self, section: str, nth: int = 0) -> Optional[int]:
        seen = -1
        for i, line in enumerate(self.lines, start=1):
            m = self._header.match(line)
            if m and m.group(1) == section:
                seen += 1
                if seen == nth:
                    return i
        return None


def _check_type(value: Any, kind: str) -> bool:
    is_number = isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == "number":
        return is_number
    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "str":
        return isinstance(value, str)
    if kind == "bool":
        return isinstance(value, bool)
    if kind == "numbers":
        return isinstance(value, list) and all(_check_type(v, "number") for v in value)
    if kind == "ints":
        return isinstance(value, list) and all(_check_type(v, "int") for v in value)
    return False


def _typed_table(table: dict, types: Dict[str, str], section: str, loc: _Locator,
                 source: str, nth: int = 0) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] 必须是表", loc.key(section), source)
    out = {}
    for key, value in table.items():
        line = loc.key(key, section, nth)
        if key not in types:
            raise ConfigError(f"[{section}] 中的未知键 '{key}'", line, source)
        if not _check_type(value, types[key]):
            raise ConfigError(f"[{section}] {key} 类型错误，需要 {types[key]}", line, source)
        out[key] = value
    return out


def _decode_line(err: tomllib.TOMLDecodeError) -> Optional[int]:
    line = getattr(err, "lineno", None)
    if line:
        return int(line)
    m = re.search(r"line (\d+)", str(err))
    return int(m.group(1)) if m else None


def parse_config_text(text: str, source: str = "<config>",
                      experiment: Optional[str] = None) -> ExperimentConfig:
    """
    严格解析实验配置：未知键、类型错误、取值非法都抛 ConfigError 并带行号
    experiment 为命令行给出的实验类型（文件中未写时使用）
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"TOML 语法错误: {e}", _decode_line(e), source) from e
    loc = _Locator(text)

    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(f"未知键 '{key}'", loc.key(key) or loc.section(key), source)

    kind = data.get("experiment", experiment)
    if experiment and "experiment" in data and data["experiment"] != experiment:
        raise ConfigError(f"配置文件的实验类型 '{data['experiment']}' 与命令行 '{experiment}' 不一致",
                          loc.key("experiment"), source)
    if not kind:
        raise ConfigError("no experiment specified", None, source)
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"未知实验类型 '{kind}'，可选 {', '.join(EXPERIMENT_KINDS)}",
                          loc.key("experiment"), source)
    description = data.get("description", "")
    if not isinstance(description, str):
        raise ConfigError("description 必须是字符串", loc.key("description"), source)

    lat_raw = _typed_table(data.get("lattice", {}), _LATTICE_TYPES, "lattice", loc, source)
    try:
        lattice = LatticeParams(**{k: (float(v) if _LATTICE_TYPES[k] == "number" else v)
                                   for k, v in lat_raw.items()})
    except ValueError as e:
        raise ConfigError(str(e), loc.section("lattice"), source) from e

    num_raw = _typed_table(data.get("numerics", {}), _numerics_types(), "numerics", loc, source)
    numerics = NumericsConfig(**num_raw)
    _validate_numerics(numerics, lattice, loc, source, kind)

    emitters = _parse_emitters(data.get("emitters", []), lattice, loc, source)
    need = EMITTER_COUNTS.get(kind, 0)
    if kind in EMITTER_COUNTS:
        if need is None and not emitters:
            raise ConfigError(f"实验 '{kind}' 至少需要一个 [[emitters]]", None, source)
        if need and len(emitters) != need:
            raise ConfigError(f"实验 '{kind}' 需要恰好 {need} 个 [[emitters]]，当前 {len(emitters)}",
                              loc.section("emitters"), source)
    _validate_combination(kind, lattice, numerics, emitters, loc, source)

    out_raw = _typed_table(data.get("output", {}), {"dir": "str"}, "output", loc, source)
    return ExperimentConfig(experiment=kind, lattice=lattice, emitters=emitters, numerics=numerics,
                            output_dir=out_raw.get("dir", DEFAULT_OUTPUT_DIR),
                            description=description, source=source)


def _parse_emitters(raw, lattice: LatticeParams, loc: _Locator, source: str) -> List[EmitterConfig]:
    if not isinstance(raw, list):
        raise ConfigError("emitters 必须写成 [[emitters]] 表数组", loc.key("emitters"), source)
    out = []
    for n, table in enumerate(raw):
        header = loc.section("emitters", n)
        if not isinstance(table, dict):
            raise ConfigError("emitters 的元素必须是表", header, source)
        for key in table:
            if key not in _EMITTER_KEYS:
                raise ConfigError(f"[[emitters]] 中的未知键 '{key}'",
                                  loc.key(key, "emitters", n), source)
        site = table.get("site")
        if not (_check_type(site, "ints") and len(site) == 3):
            raise ConfigError("site 必须是三个整数", loc.key("site", "emitters", n) or header, source)
        if not all(0 <= c < lattice.L for c in site):
            raise ConfigError(f"site {site} 超出 L={lattice.L} 的晶格",
                              loc.key("site", "emitters", n), source)
        detuning = table.get("detuning", 0.0)
        if isinstance(detuning, str):
            if detuning != "critical":
                raise ConfigError("detuning 只能是数值或 \"critical\"",
                                  loc.key("detuning", "emitters", n), source)
        elif not _check_type(detuning, "number"):
            raise ConfigError("detuning 类型错误", loc.key("detuning", "emitters", n), source)
        else:
            detuning = float(detuning)
        coupling = table.get("coupling", 0.5)
        if not _check_type(coupling, "number") or coupling < 0:
            raise ConfigError("coupling 必须是非负数", loc.key("coupling", "emitters", n), source)
        out.append(EmitterConfig(site=tuple(site), detuning=detuning, coupling=float(coupling)))
    sites = [em.site for em in out]
    if len(set(sites)) != len(sites):
        raise ConfigError("同一位点上有多个发射体", loc.section("emitters"), source)
    return out


def _validate_numerics(num: NumericsConfig, lattice: LatticeParams, loc: _Locator, source: str,
                       kind: str):
    def fail(key, msg):
        raise ConfigError(msg, loc.key(key, "numerics"), source)

    for key in ("grid", "dos_grid", "bands_grid", "n_points", "berry_grid", "node_scan"):
        if getattr(num, key) < 2:
            fail(key, f"{key} 至少为2")
    for key in ("grid", "dos_grid", "berry_grid", "node_scan"):
        if getattr(num, key) % 2:
            fail(key, f"{key} 必须为偶数")
    if num.dos_grid < 16:
        fail("dos_grid", "dos_grid 至少为16")
    for key in ("eta", "t_max", "dt_out", "tol"):
        if getattr(num, key) <= 0:
            fail(key, f"{key} 必须为正")
    if num.t_max * max(lattice.J, 1.0) > 1e4:
        fail("t_max", "t_max·J 不能超过 1e4")
    if num.plateau_window and (len(num.plateau_window) != 2
                               or num.plateau_window[0] >= num.plateau_window[1]):
        fail("plateau_window", "plateau_window 必须是 [t_lo, t_hi]")
    if len(num.fit_range) != 2:
        fail("fit_range", "fit_range 必须是 [d_min, d_max]")
    lo, hi = num.fit_range
    if kind == "boundstate" and (lo < 2 or hi > lattice.L / 2 - 2 or lo >= hi):
        fail("fit_range", f"fit_range 必须落在 [2, {lattice.L / 2 - 2:g}] 内")
    if not num.s_list or any(s < 0 for s in num.s_list):
        fail("s_list", "s_list 不能为空且必须非负")
    if any(abs(m) > 2 * lattice.J for m in num.M_list):
        fail("M_list", "M_list 中的 |M| 不能超过 2J")
    if num.g < 0:
        fail("g", "g 必须非负")
    num.fit_range = [int(v) for v in num.fit_range]
    num.plateau_window = [float(v) for v in num.plateau_window]
    num.M_list = [float(v) for v in num.M_list]
    num.s_list = [float(v) for v in num.s_list]
    for key in ("eta", "t_max", "dt_out", "g", "kx", "ky", "tol"):
        setattr(num, key, float(getattr(num, key)))



def _validate_combination(kind: str, lattice: LatticeParams, num: NumericsConfig,
                          emitters: List[EmitterConfig], loc: _Locator, source: str):
    """跨表的取值检查：这些组合在运行时才会出错，这里提前报出行号"""
    mass_line = loc.key("M", "lattice") or loc.section("lattice")
    if num.plateau_window:
        lo, hi = num.plateau_window
        if lo < 0 or hi > num.t_max + 1e-9 or hi - lo < num.dt_out:
            raise ConfigError(f"plateau_window 必须落在 [0, t_max={num.t_max:g}] 内且不短于 dt_out",
                              loc.key("plateau_window", "numerics"), source)
    scans_mass = kind == "exchange" and num.M_list
    for n, em in enumerate(emitters):
        if em.critical and not scans_mass and lattice.phase == "gapped":
            raise ConfigError(f"detuning = \"critical\" 只对 |M| ≤ 2J 定义，当前 M={lattice.M:g}",
                              loc.key("detuning", "emitters", n) or mass_line, source)
    if kind == "exchange" and len({sublattice_of(*em.site[:2]) for em in emitters}) > 1:
        raise ConfigError("exchange 的两个发射体必须在同一子格上（x+y 奇偶相同）",
                          loc.section("emitters", 1), source)
    if kind in ("spinbands", "berry"):
        if lattice.phase == "gapped":
            raise ConfigError(f"有效自旋模型只对 |M| ≤ 2J 定义，当前 M={lattice.M:g}", mass_line, source)
        reach = int(math.floor(max(num.s_list) + 1e-9))
        if 2 * reach + 1 > num.grid:
            raise ConfigError(f"s={max(num.s_list):g} 需要 grid ≥ {2 * reach + 1}",
                              loc.key("s_list", "numerics") or loc.key("grid", "numerics"), source)


def load_config(path: str, experiment: Optional[str] = None) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"无法读取配置文件: {e}", None, path) from e
    return parse_config_text(text, source=path, experiment=experiment)


# ---------------------------------------------------------------- 配方

def recipe_path(name: str) -> str:
    return os.path.join(RECIPE_DIR, f"{name}.toml")


def is_recipe(name: str) -> bool:
    return name in RECIPES and os.path.exists(recipe_path(name))


def load_recipe(name: str) -> ExperimentConfig:
    if name not in RECIPES:
        raise ConfigError(f"未知配方 '{name}'")
    return load_config(recipe_path(name))


def list_recipes() -> List[Tuple[str, str, str]]:
    """(名称, 实验类型, 一行描述)"""
    rows = []
    for name in RECIPES:
        cfg = load_recipe(name)
        rows.append((name, cfg.experiment, cfg.description))
    return rows
