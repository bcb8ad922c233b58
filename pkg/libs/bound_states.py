"""
发射体-光子束缚态
久期方程 E - Δ - Re Σ(E) = 0 的根、临界失谐 Δ_c、留数 Z、
实空间光子波函数 C_r = g C_e G(E; r, r_e) 以及各方向幂律指数
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.linalg import eigsh
from scipy.stats import linregress

from libs.emitter_dynamics import EmitterSpec, build_single_excitation_hamiltonian
from libs.errors import NoBoundStateError, NumericalError, UnphysicalResidueError
from libs.greens_functions import (
    DEFAULT_GRID, ComplexEnergy, default_etas, eta_extrapolate, green_field, green_local,
    self_energy_slope,
)
from libs.lattice_model import LatticeParams, bath_levels, sublattice_of

logger = logging.getLogger(__name__)

SECULAR_TOL = 1e-9
EXTRAPOLATION_FLAG = 1e-4
MIN_AMPLITUDE = 1e-12
FIT_AXES = {
    "xy": ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)),
    "z": ((0, 0, 1), (0, 0, -1)),
}


@dataclass
class BoundState:
    energy: float
    emitter_amplitude: float  # |C_e|，取正实数规范
    photon_field: np.ndarray  # (L, L, L)
    residue: float
    emitter: EmitterSpec
    params: LatticeParams

    @property
    def emitter_weight(self) -> float:
        """|C_e|² = Z，等于长时间发射体振幅 |C_e(t→∞)|"""
        return self.emitter_amplitude ** 2

    def norm(self) -> float:
        return float(self.emitter_amplitude ** 2 + np.sum(np.abs(self.photon_field) ** 2))

    def abs_field(self) -> np.ndarray:
        return np.abs(self.photon_field)

    def display_field(self) -> np.ndarray:
        """作图约定：|C_r| / ((g/J)|C_e(t→∞)|)"""
        g, J = self.emitter.coupling, self.params.J
        scale = (g / J) * self.emitter_weight if J > 0 else 0.0
        if scale == 0:
            return self.abs_field()
        return self.abs_field() / scale

    def as_vector(self) -> np.ndarray:
        """与 build_single_excitation_hamiltonian 同样排列的本征矢"""
        return np.concatenate([self.photon_field.ravel(), [self.emitter_amplitude]])


@dataclass
class PowerLawFit:
    direction: str
    sublattice: str  # A / B / pooled
    exponent: float
    prefactor: float
    fit_range: Tuple[int, int]
    r_squared: float
    n_points: int
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "sublattice": self.sublattice,
            "gamma": self.exponent,
            "prefactor": self.prefactor,
            "fit_range": list(self.fit_range),
            "r_squared": self.r_squared,
            "n_points": self.n_points,
            "flagged": self.flagged,
        }


@dataclass
class CriticalDetuning:
    M: float
    delta_c: float
    extrapolation_error: float
    flagged: bool = False


@dataclass
class ResiduePoint:
    M: float
    delta_c: float
    energy: float
    residue: float

    @property
    def population(self) -> float:
        return self.residue ** 2


def _secular(params: LatticeParams, emitter: EmitterSpec, grid: int):
    g, delta, alpha = emitter.coupling, emitter.detuning, emitter.sublattice

    def f(E):
        return E - delta - (g * g * green_local(params, ComplexEnergy(E, 0.0), alpha, grid)).real
    return f


def find_bound_state_energy(params: LatticeParams, emitter: EmitterSpec,
                            grid: int = DEFAULT_GRID) -> float:
    """
    在离散浴的能隙 (-edge, edge) 内求久期方程的根（brentq：二分加割线）
    该区间内 f 单调递增
    """
    if emitter.coupling == 0:
        return float(emitter.detuning)
    edge = float(bath_levels(params, grid).min())
    if edge <= 1e-12 * max(params.J, 1e-300):
        raise NoBoundStateError(f"grid={grid} 的离散浴在 E=0 处有能级，无法定义能隙内的束缚态")
    f = _secular(params, emitter, grid)
    f0 = f(0.0)
    if abs(f0) <= 1e-14 * max(params.J, 1.0):
        return 0.0

    lo, hi = -edge * (1 - 1e-9), edge * (1 - 1e-9)
    f_lo, f_hi = f(lo), f(hi)
    if f_lo * f_hi > 0:
        raise NoBoundStateError(
            f"久期方程在 [{lo:.4g}, {hi:.4g}] 内没有变号（f={f_lo:.3g}, {f_hi:.3g}），"
            f"Δ={emitter.detuning:.6g} 时不存在能隙内束缚态")
    try:
        root = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    except RuntimeError as e:
        raise NumericalError(f"久期方程求根不收敛：{e}") from e
    residual = abs(f(root))
    if residual > SECULAR_TOL * max(params.J, 1.0):
        raise NumericalError(f"久期方程残差 {residual:.3g} 超限")
    return float(root)


def critical_detuning(params: LatticeParams, g: float, M: Optional[float] = None,
                      grid: int = DEFAULT_GRID, alpha: str = "A") -> CriticalDetuning:
    """Δ_c = -Re Σ(0)，η→0 外推"""
    if M is not None:
        params = replace(params, M=float(M))
    if params.phase == "gapped":
        raise ValueError(f"临界失谐只对 |M| ≤ 2J 定义，当前 M={params.M}")
    if g == 0:
        return CriticalDetuning(M=params.M, delta_c=0.0, extrapolation_error=0.0)

    value, err = eta_extrapolate(
        lambda eta: g * g * green_local(params, ComplexEnergy(0.0, eta), alpha, grid),
        default_etas(params))
    delta_c = -float(np.real(value))
    error = float(err)
    if not (math.isfinite(delta_c) and math.isfinite(error)):
        raise NumericalError(f"M={params.M:.6g} 时 Δ_c 外推得到非有限值 {delta_c}")
    flagged = error > EXTRAPOLATION_FLAG * params.J
    if flagged:
        logger.warning("M=%.4g 时 Δ_c 外推误差 %.3g 超过 %.1e J", params.M, error, EXTRAPOLATION_FLAG)
    logger.info("M=%.6g, g=%.4g: Δ_c=%.10g（外推误差 %.2g）", params.M, g, delta_c, error)
    return CriticalDetuning(M=params.M, delta_c=delta_c, extrapolation_error=error, flagged=flagged)


def _centre_site(params: LatticeParams, alpha: str = "A") -> Tuple[int, int, int]:
    c = params.L // 2
    site = (c, c, c)
    if sublattice_of(c, c) != alpha:
        site = (c + 1, c, c)
    return site


def _nearest_eigenpair(ham, sigma: float):
    """
    移位求逆：sigma 恰为本征值时 splu 因奇异失败，ARPACK 不收敛时同样报数值失败
    """
    try:
        vals, vecs = eigsh(ham, k=1, sigma=sigma, which="LM")
    except RuntimeError as e:
        raise NumericalError(f"sigma={sigma:.6g} 处移位求逆失败：{e}") from e
    return float(vals[0]), vecs[:, 0]


def eigensolve_bound_state(params: LatticeParams, emitter: EmitterSpec,
                           sigma: float = 0.0) -> Tuple[float, np.ndarray]:
    """
    单激发哈密顿量在 sigma 附近的本征对（移位求逆）
    本征矢按发射体分量取正实数
    """
    ham = build_single_excitation_hamiltonian(params, [emitter])
    energy, vec = _nearest_eigenpair(ham, sigma)
    ce = vec[-1]
    if abs(ce) > 0:
        vec = vec * (abs(ce) / ce)
    return energy, vec


def critical_detuning_eigensolve(params: LatticeParams, g: float, M: Optional[float] = None,
                                 width: float = 0.05, sigma: float = 1e-3) -> float:
    """
    有限晶格上的 Δ_c：调 Δ 使单激发哈密顿量最接近 0 的本征值恰为 0
    用于校验动量求和的结果
    """
    if M is not None:
        params = replace(params, M=float(M))
    site = _centre_site(params, "A")
    guess = -(g * g * green_local(params, ComplexEnergy(0.0, 0.0), "A", params.L)).real
    shift = sigma * params.J

    def mid_level(delta):
        ham = build_single_excitation_hamiltonian(params, [EmitterSpec(site, delta, g)])
        return _nearest_eigenpair(ham, shift)[0]

    span = width * params.J
    try:
        return float(brentq(mid_level, guess - span, guess + span, xtol=1e-13))
    except ValueError as e:
        raise NoBoundStateError(
            f"Δ ∈ [{guess - span:.6g}, {guess + span:.6g}] 内中间能级不过零，找不到 Δ_c") from e
    except RuntimeError as e:
        raise NumericalError(f"有限晶格 Δ_c 求根不收敛：{e}") from e


def bound_state_wavefunction(params: LatticeParams, emitter: EmitterSpec,
                             E_BS: Optional[float] = None, L: Optional[int] = None) -> BoundState:
    """
    L³ 晶格上的束缚态：C_r = g C_e G(E; r, r_e)，与 C_e 一起归一化
    E_BS 会在该晶格的公度网格上重新满足久期方程
    """
    lattice = params if L is None else replace(params, L=int(L))
    L = lattice.L
    if not all(0 <= c < L for c in emitter.site):
        raise ValueError(f"发射体位点 {emitter.site} 超出 L={L} 的晶格")

    f = _secular(lattice, emitter, L)
    if E_BS is None or abs(f(E_BS)) > SECULAR_TOL * 0.1 * max(lattice.J, 1.0):
        previous = E_BS
        E_BS = find_bound_state_energy(lattice, emitter, grid=L)
        if previous is not None:
            logger.debug("束缚态能量在 L=%d 晶格上重新求解：%.6g -> %.6g", L, previous, E_BS)

    edge = float(bath_levels(lattice, L).min())
    if abs(E_BS) >= edge:
        raise NoBoundStateError(f"E_BS={E_BS:.6g} 不在离散浴能隙内（|E| < {edge:.4g}），不是束缚态")

    g = emitter.coupling
    if g == 0:
        photon = np.zeros((L, L, L), dtype=complex)
    else:
        field = green_field(lattice, ComplexEnergy(E_BS, 0.0), emitter.sublattice, grid=L)
        photon = g * field.on_lattice(emitter.site, L)
    ce = 1.0 / math.sqrt(1.0 + float(np.sum(np.abs(photon) ** 2)))
    photon *= ce
    state = BoundState(energy=float(E_BS), emitter_amplitude=ce, photon_field=photon,
                       residue=ce * ce, emitter=emitter, params=lattice)
    logger.info("束缚态 L=%d M=%.4g g=%.4g：E=%.6g, Z=%.6g", L, lattice.M, g, E_BS, state.residue)
    return state


def fit_power_law(bs: BoundState, direction: str, sublattice: Optional[str] = None,
                  fit_range: Sequence[int] = (2, 8)) -> PowerLawFit:
    """
    沿坐标轴（±方向合并）对 log|C| - log d 做最小二乘
    sublattice=None 时两个子格合并
    """
    L = bs.params.L
    lo, hi = int(fit_range[0]), int(fit_range[1])
    if lo < 2 or hi > L / 2 - 2 or lo >= hi:
        raise ValueError(f"拟合区间 [{lo}, {hi}] 必须落在 [2, {L / 2 - 2:g}] 内")
    if direction not in FIT_AXES:
        raise ValueError(f"direction 只能是 {sorted(FIT_AXES)}，当前 {direction!r}")

    origin = np.array(bs.emitter.site)
    amp = bs.abs_field()
    dist, values = [], []
    for axis in FIT_AXES[direction]:
        for d in range(lo, hi + 1):
            x, y, z = np.mod(origin + d * np.array(axis), L)
            if sublattice is not None and sublattice_of(x, y) != sublattice:
                continue
            c = float(amp[x, y, z])
            if c < MIN_AMPLITUDE:
                continue
            dist.append(d)
            values.append(c)
    if len(dist) < 4 or len(set(dist)) < 2:
        raise ValueError(
            f"{direction} 方向子格 {sublattice or 'pooled'} 的有效点只有 {len(dist)} 个，无法拟合")

    fit = linregress(np.log(dist), np.log(values))
    r_squared = float(fit.rvalue ** 2)
    result = PowerLawFit(direction=direction, sublattice=sublattice or "pooled",
                         exponent=float(-fit.slope), prefactor=float(math.exp(fit.intercept)),
                         fit_range=(lo, hi), r_squared=r_squared, n_points=len(dist),
                         flagged=r_squared < 0.98)
    if result.flagged:
        logger.warning("%s 方向（%s）幂律拟合 r²=%.4f < 0.98", direction, result.sublattice, r_squared)
    return result


def residue(params: LatticeParams, emitter: EmitterSpec, E_BS: float,
            grid: int = DEFAULT_GRID) -> float:
    """Z = 1/(1 - Σ'(E_BS))；长时间布居为 Z²"""
    if emitter.coupling == 0:
        return 1.0
    slope = self_energy_slope(params, emitter.coupling, E_BS, emitter.sublattice, grid)
    if slope >= 1.0:
        raise UnphysicalResidueError(f"Σ'(E_BS)={slope:.6g} ≥ 1，留数无物理意义")
    return 1.0 / (1.0 - slope)


def residue_point(params: LatticeParams, g: float, M: float, grid: int = DEFAULT_GRID,
                  alpha: str = "A") -> ResiduePoint:
    """Δ = Δ_c(M) 时的束缚态能量与留数"""
    lattice = replace(params, M=float(M))
    crit = critical_detuning(lattice, g, grid=grid, alpha=alpha)
    emitter = EmitterSpec(_centre_site(lattice, alpha), crit.delta_c, g)
    energy = find_bound_state_energy(lattice, emitter, grid)
    z = residue(lattice, emitter, energy, grid)
    return ResiduePoint(M=float(M), delta_c=crit.delta_c, energy=energy, residue=z)


def residue_sweep(params: LatticeParams, g: float, M_values: Sequence[float],
                  grid: int = DEFAULT_GRID) -> List[ResiduePoint]:
    """Z²(M) 扫描，平台布居随 M 基本不变"""
    return [residue_point(params, g, M, grid) for M in M_values]
