"""
浴的预解式 G(z) = (z - H)^-1 与发射体自能 Σ(z) = g² G_ee(z)

G_{αα'}(z; r) = <r_e + r, α| (z - H)^-1 |r_e, α'>
             = (1/N) Σ_k e^{ik·r} [(z - H(k))^-1]_{αα'}
求和遍历完整立方网格（含边界扭转偏移），子格与位移奇偶不匹配的组合恒为零。
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import logging
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from libs.errors import NumericalError, PoleOnContourError
from libs.lattice_model import (
    LatticeParams, SUBLATTICES, bath_levels, momentum_axes, sublattice_sign,
)

logger = logging.getLogger(__name__)

DEFAULT_GRID = 64
DEFAULT_ETA = 1e-3
# 实轴极限外推所用的 η（以 J 为单位）
EXTRAPOLATION_ETAS = (4e-3, 2e-3, 1e-3)
POLE_TOL = 1e-12


@dataclass(frozen=True)
class ComplexEnergy:
    """z = E + iη，η ≥ 0"""

    E: float
    eta: float = 0.0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"η 必须非负，当前 {self.eta}")

    @property
    def value(self) -> complex:
        return complex(self.E, self.eta)

    def conjugate(self) -> complex:
        return complex(self.E, -self.eta)

    @classmethod
    def of(cls, z: Union["ComplexEnergy", complex, float]) -> "ComplexEnergy":
        if isinstance(z, ComplexEnergy):
            return z
        z = complex(z)
        return cls(z.real, z.imag)


def _bloch_grid(params: LatticeParams, grid: int):
    """FFT 顺序的 d_x, d_y, d_z 网格"""
    kx, ky, kz = momentum_axes(grid, params.offsets, params.a)
    J, a = params.J, params.a
    dx = (2 * J * np.cos(kx * a))[:, None, None]
    dy = (2 * J * np.sin(ky * a))[None, :, None]
    dz = (2 * J * np.cos(kz * a) + params.M)[None, None, :]
    return dx, dy, dz


def _denominator(params: LatticeParams, z: complex, eta: float, grid: int) -> np.ndarray:
    levels = bath_levels(params, grid)
    den = z * z - levels ** 2
    if eta == 0.0:
        scale = max(params.J, abs(params.M), abs(z), 1e-300) ** 2
        if np.min(np.abs(den)) < POLE_TOL * scale:
            raise PoleOnContourError(
                f"E={z.real:.12g} 恰好落在 grid={grid} 的浴能级上（η=0），预解式发散")
    return den


def resolvent_component(params: LatticeParams, z, pair: Tuple[str, str],
                        grid: int = DEFAULT_GRID) -> np.ndarray:
    """
    [(z - H(k))^-1]_{αα'} 在整个网格上的值，pair = (α 目标, α' 源)
    (z - d·σ)^-1 = (z + d·σ) / (z² - |d|²)
    z 直接给复数时允许落在下半平面（超前预解式）
    """
    if isinstance(z, ComplexEnergy):
        value, eta = z.value, z.eta
    else:
        value = complex(z)
        eta = abs(value.imag)
    den = _denominator(params, value, eta, grid)
    dx, dy, dz = _bloch_grid(params, grid)
    alpha, source = pair
    if alpha == source:
        return (value + sublattice_sign(alpha) * dz) / den
    if (alpha, source) == ("A", "B"):
        return (dx - 1j * dy) / den
    return (dx + 1j * dy) / den


def green_local(params: LatticeParams, z, alpha: str = "A",
                grid: int = DEFAULT_GRID) -> complex:
    """G_αα(z; 0)，即 (z - H)^-1 的对角元"""
    if grid < 32:
        logger.debug("green_local 使用小网格 grid=%d（仅适合测试）", grid)
    return complex(np.mean(resolvent_component(params, z, (alpha, alpha), grid)))


def _parity_ok(displacement, pair) -> bool:
    rx, ry = int(displacement[0]), int(displacement[1])
    same = (rx + ry) % 2 == 0
    return same == (pair[0] == pair[1])


def green_pair(params: LatticeParams, z, displacement, sublattice_pair=("A", "A"),
               grid: int = DEFAULT_GRID) -> complex:
    """单个位移的动量直接求和"""
    pair = tuple(sublattice_pair)
    if pair[0] not in SUBLATTICES or pair[1] not in SUBLATTICES:
        raise ValueError(f"未知子格组合 {pair}")
    r = np.asarray(displacement, dtype=int)
    comp = resolvent_component(params, z, pair, grid)
    if not _parity_ok(r, pair):
        return 0j
    kx, ky, kz = momentum_axes(grid, params.offsets, params.a)
    a = params.a
    px = np.exp(1j * kx * a * r[0])[:, None, None]
    py = np.exp(1j * ky * a * r[1])[None, :, None]
    pz = np.exp(1j * kz * a * r[2])[None, None, :]
    return complex(np.mean(comp * px * py * pz))


@dataclass
class GreensField:
    """
    一次 FFT 得到的全部位移上的 G_{·α'}(z; r)
    values 以 r mod n 索引，边界扭转相位 e^{2πi o·r/n} 在取值时补上
    """

    values: np.ndarray
    source: str
    offsets: np.ndarray
    z: ComplexEnergy

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def at(self, displacement) -> complex:
        r = np.asarray(displacement, dtype=int)
        idx = tuple(np.mod(r, self.n))
        phase = np.exp(2j * np.pi * np.dot(self.offsets, r) / self.n)
        return complex(self.values[idx] * phase)

    def block(self, displacements: np.ndarray) -> np.ndarray:
        """批量取值，displacements 形状 (..., 3)"""
        r = np.asarray(displacements, dtype=int)
        idx = np.mod(r, self.n)
        phase = np.exp(2j * np.pi * (r @ self.offsets) / self.n)
        return self.values[idx[..., 0], idx[..., 1], idx[..., 2]] * phase

    def on_lattice(self, origin, L: int) -> np.ndarray:
        """
        L³ 晶格上所有位点相对 origin 的 G，形状 (L, L, L)
        位移取坐标差（不取最小像），与扭转边界一致
        """
        if L != self.n:
            raise ValueError(f"场网格 {self.n} 与晶格尺寸 L={L} 不一致")
        coords = [np.arange(L) - int(o) for o in origin]
        ix, iy, iz = (np.mod(c, L) for c in coords)
        vals = self.values[np.ix_(ix, iy, iz)]
        ox, oy, oz = self.offsets
        phase = np.exp(2j * np.pi / L * (
            ox * coords[0][:, None, None] + oy * coords[1][None, :, None]
            + oz * coords[2][None, None, :]))
        return vals * phase


def green_field(params: LatticeParams, z, source: str = "A",
                grid: int = DEFAULT_GRID) -> GreensField:
    """两个目标子格各做一次逆 FFT，再按位移奇偶拼接"""
    z = ComplexEnergy.of(z)
    other = "B" if source == "A" else "A"
    same_part = np.fft.ifftn(resolvent_component(params, z, (source, source), grid))
    cross_part = np.fft.ifftn(resolvent_component(params, z, (other, source), grid))
    m = np.arange(grid)
    parity_even = ((m[:, None, None] + m[None, :, None]) % 2 == 0) & np.ones((1, 1, grid), bool)
    values = np.where(parity_even, same_part, cross_part)
    return GreensField(values=values, source=source, offsets=params.offsets, z=z)


def self_energy(params: LatticeParams, g: float, z, alpha: str = "A",
                grid: int = DEFAULT_GRID) -> complex:
    return g * g * green_local(params, z, alpha, grid)


def self_energy_slope(params: LatticeParams, g: float, E: float, alpha: str = "A",
                      grid: int = DEFAULT_GRID, step: float = None) -> float:
    """
    dΣ/dE：五点中心差分（步长 1e-3 J），再做一次 Richardson 外推
    E 附近 2 个步长内有离散浴能级时 Σ 不光滑，拒绝计算
    """
    if g == 0:
        return 0.0
    if step is None:
        step = 1e-3 * params.J
    levels = bath_levels(params, grid)
    nearest = float(np.min(np.abs(levels - abs(E))))
    if nearest <= 3.0 * step:
        raise NumericalError(
            f"E={E:.6g} 距离浴能级仅 {nearest:.3g}，Im Σ 不可忽略，斜率无定义")

    def sigma(x):
        return (g * g * green_local(params, ComplexEnergy(x, 0.0), alpha, grid)).real

    def stencil(h):
        return (sigma(E - 2 * h) - 8 * sigma(E - h) + 8 * sigma(E + h) - sigma(E + 2 * h)) / (12 * h)

    coarse, fine = stencil(step), stencil(step / 2)
    return float((16.0 * fine - coarse) / 15.0)


def eta_extrapolate(fn: Callable[[float], Union[complex, np.ndarray]],
                    etas: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    η→0 外推：对 η 做二次拟合取截距
    误差估计 = |二次外推 - 最小两个 η 的线性外推|
    fn 可以返回标量或数组
    """
    etas = np.asarray(sorted(etas), dtype=float)
    if etas.size != 3 or etas[0] <= 0:
        raise ValueError("需要三个正的 η")
    samples = np.array([np.asarray(fn(e)) for e in etas])
    shape = samples.shape[1:]
    flat = samples.reshape(3, -1)

    def intercept(y):
        return np.polyfit(etas, y, 2)[-1]

    quad = intercept(flat.real) + 1j * intercept(flat.imag)
    lin = flat[0] - etas[0] * (flat[1] - flat[0]) / (etas[1] - etas[0])
    err = np.abs(quad - lin)
    return quad.reshape(shape), err.reshape(shape)


def default_etas(params: LatticeParams) -> Tuple[float, ...]:
    return tuple(e * params.J for e in EXTRAPOLATION_ETAS)
