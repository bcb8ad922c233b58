"""
测试公用的小工具
在仓库根目录运行：python -m unittest discover -s tests -t .
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import logging

import numpy as np

from libs.lattice_model import LatticeParams, build_real_space_hamiltonian

# 测试时只保留警告以上的日志，避免刷屏
logging.getLogger("libs").setLevel(logging.WARNING)


def lattice(**changes) -> LatticeParams:
    return LatticeParams(**changes)


def dense_bath(params: LatticeParams) -> np.ndarray:
    return build_real_space_hamiltonian(params).toarray()


def flat_index(site, L: int) -> int:
    x, y, z = site
    return (x * L + y) * L + z
