"""
便携函数库，集合了结果输出会用到的一些函数
CSV/JSON 写出、文件哈希、运行标识
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import csv
import hashlib
import json
import logging
import math
import os
from typing import Any, Iterable, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNITS_LINE = "# units: energies in J, lengths in a, times in 1/J"


# 浮点数格式化；确定性模式下保留全部17位有效数字
def format_float(value: Any, deterministic: bool = False) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    x = float(value)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0.0:
        x = 0.0  # 去掉 -0
    return ("%.17g" if deterministic else "%.10g") % x


def to_builtin(obj: Any) -> Any:
    """把 numpy 标量/数组递归转换成 json 可写的内置类型"""
    if isinstance(obj, dict):
        return {str(k): to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_builtin(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]],
              deterministic: bool = False, note: Optional[str] = None) -> str:
    """
    第一行为单位注释，第二行为列名，行尾统一 LF
    """
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(UNITS_LINE + "\n")
        if note:
            f.write(f"# {note}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_float(v, deterministic) for v in row])
    logger.debug("写出 %s", path)
    return path


def write_json(path: str, data: Any) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(to_builtin(data), f, ensure_ascii=False, indent=2)
        f.write("\n")
    logger.debug("写出 %s", path)
    return path


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


# 生成8位字符的运行标识符，同一配置得到同一标识
def generate_run_id(config: dict) -> str:
    text = json.dumps(to_builtin(config), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:8]


class ArtifactWriter:
    """
    记录本次运行写出的所有文件，失败时可以一并删除
    """

    def __init__(self, out_dir: str, deterministic: bool = False):
        self.out_dir = out_dir
        self.deterministic = deterministic
        self.files: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]],
            note: Optional[str] = None) -> str:
        path = write_csv(self.path(name), columns, rows, self.deterministic, note)
        self.files.append(name)
        return path

    def json(self, name: str, data: Any) -> str:
        path = write_json(self.path(name), data)
        self.files.append(name)
        return path

    def describe(self) -> List[dict]:
        """清单条目：文件名、sha256、字节数"""
        out = []
        for name in self.files:
            path = self.path(name)
            out.append({"file": name, "sha256": sha256_file(path),
                        "bytes": os.path.getsize(path)})
        return out

    def remove_all(self):
        for name in self.files:
            try:
                os.remove(self.path(name))
            except FileNotFoundError:
                pass
            except OSError as e:
                logger.warning("删除不完整输出 %s 失败：%s", name, e)
        if self.files:
            logger.info("已删除 %d 个不完整输出文件", len(self.files))
        self.files = []
