"""
Weyl 光子晶格（浴）模型
包括实空间稀疏哈密顿量、Bloch 形式、能带、态密度、能隙和 Weyl 点

约定：
- 子格符号 s(r) = (-1)^(x+y)，A 为 +1，B 为 -1
- x 键 +J，y 键 -s(r)J，z 键 s(r)J，对角 s(r)M
- 位点中心规范下 H(k) = d(k)·σ，
  d_x = 2J cos(k_x a)，d_y = 2J sin(k_y a)，d_z = 2J cos(k_z a) + M
- 动量以原立方晶格的 1/a 为单位；约化布里渊区
  k_x a ∈ [-π, π)，k_y a ∈ [-π/2, π/2)，k_z a ∈ [-π, π)，倒格矢 (π, π, 0)/a
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import logging
import math
from dataclasses import dataclass, asdict, field, replace
from functools import lru_cache
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import gaussian_filter1d, minimum_filter
from scipy.optimize import minimize
from scipy.stats import linregress

from libs.errors import NumericalError

logger = logging.getLogger(__name__)

SUBLATTICES = ("A", "B")
# 各方向边界扭转（以一个动量步长为单位的偏移）
BOUNDARY_OFFSETS = {
    "periodic": (0.0, 0.0, 0.0),
    "twisted": (0.0, 0.5, 0.0),
}
DEGENERACY_TOL = 1e-12
NODE_MERGE_TOL = 1e-4


def sublattice_of(x: int, y: int) -> str:
    """(x+y) 为偶数是 A，否则是 B"""
    return "A" if (int(x) + int(y)) % 2 == 0 else "B"


def sublattice_sign(alpha: str) -> int:
    """A -> +1, B -> -1"""
    if alpha not in SUBLATTICES:
        raise ValueError(f"未知子格: {alpha!r}")
    return 1 if alpha == "A" else -1


@dataclass(frozen=True)
class LatticeParams:
    """
    晶格参数
    boundary:
        periodic  三个方向都是周期闭合
        twisted   y 方向反周期闭合（跨缝的键反号），其余周期；默认值
    """

    J: float = 1.0
    M: float = 0.0
    a: float = 1.0
    L: int = 20
    boundary: str = "twisted"

    def __post_init__(self):
        if self.J < 0:
            raise ValueError(f"跃迁 J 必须非负，当前 {self.J}")
        if self.a <= 0:
            raise ValueError(f"晶格常数 a 必须为正，当前 {self.a}")
        if int(self.L) != self.L or self.L < 2 or int(self.L) % 2:
            raise ValueError(
                f"L 必须是不小于2的偶数（交错因子 (-1)^(x+y) 只在偶数 L 下周期闭合），当前 {self.L}")
        object.__setattr__(self, "L", int(self.L))
        if self.boundary not in BOUNDARY_OFFSETS:
            raise ValueError(
                f"boundary 只能是 {sorted(BOUNDARY_OFFSETS)}，当前 {self.boundary!r}")

    @property
    def n_sites(self) -> int:
        return self.L ** 3

    @property
    def offsets(self) -> np.ndarray:
        return np.array(BOUNDARY_OFFSETS[self.boundary])

    @property
    def phase(self) -> str:
        """gapless: |M|<2J；critical: |M|=2J；gapped: |M|>2J"""
        edge = 2.0 * self.J
        if math.isclose(abs(self.M), edge, rel_tol=1e-12, abs_tol=1e-300):
            return "critical"
        return "gapless" if abs(self.M) < edge else "gapped"

    @property
    def gapless(self) -> bool:
        return self.phase == "gapless"

    def with_(self, **changes) -> "LatticeParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LatticeParams":
        return cls(**data)


@dataclass(frozen=True)
class SiteIndex:
    x: int
    y: int
    z: int

    @property
    def sublattice(self) -> str:
        return sublattice_of(self.x, self.y)

    def flat(self, L: int) -> int:
        """与 build_real_space_hamiltonian 相同的 C 序编号"""
        if not all(0 <= c < L for c in (self.x, self.y, self.z)):
            raise ValueError(f"位点 {(self.x, self.y, self.z)} 超出 L={L} 的晶格")
        return (self.x * L + self.y) * L + self.z

    @classmethod
    def from_flat(cls, index: int, L: int) -> "SiteIndex":
        x, y, z = np.unravel_index(int(index), (L, L, L))
        return cls(int(x), int(y), int(z))


@dataclass
class WeylNode:
    """能带简并点；chirality 为下能带穿过包围盒的 Berry 通量 / 2π"""

    momentum: np.ndarray
    frequency: float
    chirality: int
    flux: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "kx": float(self.momentum[0]),
            "ky": float(self.momentum[1]),
            "kz": float(self.momentum[2]),
            "frequency": float(self.frequency),
            "chirality": int(self.chirality),
            "flux": float(self.flux),
        }


@dataclass
class DispersionSample:
    momentum: np.ndarray
    omega_minus: float
    omega_plus: float
    eigenvectors: np.ndarray  # 列：下能带、上能带
    gauge_ambiguous: bool = False


@dataclass
class DosHistogram:
    """按格点归一化的态密度，bin 等宽且关于 0 对称"""

    bin_edges: np.ndarray
    density: np.ndarray
    eta: float
    grid_per_axis: int
    ragged: bool = field(default=False)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    def at(self, omega) -> np.ndarray:
        """bin 中心之间线性插值，谱外为 0"""
        return np.interp(omega, self.centers, self.density, left=0.0, right=0.0)

    def integral(self) -> float:
        return float(np.sum(self.density) * self.bin_width)

    def power_law_exponent(self, omega_min: float, omega_max: float) -> float:
        """log D 对 log ω 的最小二乘斜率，只用正频率一侧"""
        c = self.centers
        mask = (c >= omega_min) & (c <= omega_max) & (self.density > 0)
        if np.count_nonzero(mask) < 4:
            raise NumericalError("拟合区间内有效 bin 不足4个")
        fit = linregress(np.log(c[mask]), np.log(self.density[mask]))
        return float(fit.slope)


# ---------------------------------------------------------------- 动量空间

def reduce_momentum(k, a: float = 1.0) -> np.ndarray:
    """把任意动量折回约化布里渊区（只差倒格矢，本征值不变）"""
    ka = np.array(k, dtype=float) * a
    n = np.floor((ka[..., 1] + np.pi / 2) / np.pi)
    ka[..., 0] -= n * np.pi
    ka[..., 1] -= n * np.pi
    ka[..., 0] = np.mod(ka[..., 0] + np.pi, 2 * np.pi) - np.pi
    ka[..., 2] = np.mod(ka[..., 2] + np.pi, 2 * np.pi) - np.pi
    return ka / a


def bloch_vector(params: LatticeParams, k) -> np.ndarray:
    """d(k)，支持 (...,3) 批量输入"""
    ka = np.asarray(k, dtype=float) * params.a
    d = np.empty(ka.shape, dtype=float)
    d[..., 0] = 2.0 * params.J * np.cos(ka[..., 0])
    d[..., 1] = 2.0 * params.J * np.sin(ka[..., 1])
    d[..., 2] = 2.0 * params.J * np.cos(ka[..., 2]) + params.M
    return d


def pauli_matrix(d: np.ndarray) -> np.ndarray:
    """d·σ，形状 (...,2,2)"""
    d = np.asarray(d)
    h = np.empty(d.shape[:-1] + (2, 2), dtype=complex)
    h[..., 0, 0] = d[..., 2]
    h[..., 1, 1] = -d[..., 2]
    h[..., 0, 1] = d[..., 0] - 1j * d[..., 1]
    h[..., 1, 0] = d[..., 0] + 1j * d[..., 1]
    return h


def bloch_hamiltonian(params: LatticeParams, k) -> np.ndarray:
    """(A, B) 基下的 2×2 Bloch 矩阵；k 超出约化区时由周期性自动处理"""
    return pauli_matrix(bloch_vector(params, k))


def band_energies(params: LatticeParams, k) -> Tuple[np.ndarray, np.ndarray]:
    """(ω-, ω+) = (-|d|, +|d|)"""
    norm = np.linalg.norm(bloch_vector(params, k), axis=-1)
    return -norm, norm


def fix_gauge(vectors: np.ndarray) -> np.ndarray:
    """
    本征矢规范：每一列中模最大的分量取为正实数
    vectors 形状 (...,n,m)，列为本征矢
    """
    idx = np.argmax(np.abs(vectors), axis=-2)
    pick = np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    mag = np.abs(pick)
    phase = np.where(mag > 0, pick / np.where(mag > 0, mag, 1.0), 1.0)
    return vectors * np.conj(phase)


def bands(params: LatticeParams, k) -> DispersionSample:
    k = np.asarray(k, dtype=float)
    h = bloch_hamiltonian(params, k)
    vals, vecs = np.linalg.eigh(h)
    ambiguous = bool(vals[1] - vals[0] < DEGENERACY_TOL * max(params.J, abs(params.M), 1e-300))
    if ambiguous:
        # 简并点本征矢任意，固定为单位矩阵并标记
        logger.debug("动量 %s 处能带简并，本征矢规范不确定", k)
        vecs = np.eye(2, dtype=complex)
    else:
        vecs = fix_gauge(vecs)
    return DispersionSample(momentum=k, omega_minus=float(vals[0]), omega_plus=float(vals[1]),
                            eigenvectors=vecs, gauge_ambiguous=ambiguous)


def momentum_axes(n: int, offsets=(0.0, 0.0, 0.0), a: float = 1.0, centered: bool = False):
    """
    三个方向的一维动量轴 k_i = 2π(m + o_i)/(n a)
    centered=False 时 m = 0..n-1（FFT 顺序），否则 m = -n/2..n/2-1
    """
    m = np.arange(n) - (n // 2 if centered else 0)
    return tuple(2.0 * np.pi * (m + o) / (n * a) for o in offsets)


def _dsq_from_axes(params: LatticeParams, kx, ky, kz) -> np.ndarray:
    J, a = params.J, params.a
    cx = (2 * J * np.cos(kx * a)) ** 2
    sy = (2 * J * np.sin(ky * a)) ** 2
    cz = (2 * J * np.cos(kz * a) + params.M) ** 2
    return cx[:, None, None] + sy[None, :, None] + cz[None, None, :]


@lru_cache(maxsize=8)
def bath_levels(params: LatticeParams, grid: int) -> np.ndarray:
    """
    完整立方网格（含边界扭转偏移）上的 |d(k)|，形状 (grid, grid, grid)
    结果只读且被缓存
    """
    axes = momentum_axes(grid, params.offsets, params.a)
    levels = np.sqrt(_dsq_from_axes(params, *axes))
    levels.setflags(write=False)
    return levels


def commensurate_momenta(params: LatticeParams) -> np.ndarray:
    """与 L³ 实空间晶格对应的约化动量网格，共 L³/2 个点"""
    L, (ox, oy, oz) = params.L, params.offsets
    nx, ny, nz = np.meshgrid(np.arange(L), np.arange(L // 2), np.arange(L), indexing="ij")
    k = np.stack([nx + ox, ny + oy, nz + oz], axis=-1) * (2.0 * np.pi / (L * params.a))
    return k.reshape(-1, 3)


def bloch_spectrum(params: LatticeParams) -> np.ndarray:
    """公度网格上 ±|d(k)| 的有序多重集，长度 L³"""
    _, plus = band_energies(params, commensurate_momenta(params))
    return np.sort(np.concatenate([-plus, plus]))


# ---------------------------------------------------------------- 实空间

def real_space_bonds(params: LatticeParams):
    """
    每个格点向 +x, +y, +z 各发出一根键，共 3L³ 根（未做厄米共轭）
    :return: (src, dst, amplitude)
    """
    L, J = params.L, params.J
    twist = np.cos(2.0 * np.pi * params.offsets)  # 只会是 ±1
    idx = np.arange(L ** 3)
    x, y, z = np.unravel_index(idx, (L, L, L))
    s = 1 - 2 * ((x + y) % 2)
    shape = (L, L, L)

    dst_x = np.ravel_multi_index(((x + 1) % L, y, z), shape)
    dst_y = np.ravel_multi_index((x, (y + 1) % L, z), shape)
    dst_z = np.ravel_multi_index((x, y, (z + 1) % L), shape)
    amp_x = J * np.where(x == L - 1, twist[0], 1.0)
    amp_y = -s * J * np.where(y == L - 1, twist[1], 1.0)
    amp_z = s * J * np.where(z == L - 1, twist[2], 1.0)

    src = np.concatenate([idx, idx, idx])
    dst = np.concatenate([dst_x, dst_y, dst_z])
    amp = np.concatenate([amp_x, amp_y, amp_z]).astype(float)
    return src, dst, amp


def onsite_energies(params: LatticeParams) -> np.ndarray:
    L = params.L
    x, y, _ = np.unravel_index(np.arange(L ** 3), (L, L, L))
    return (1 - 2 * ((x + y) % 2)) * float(params.M)


def build_real_space_hamiltonian(params: LatticeParams) -> sp.csr_matrix:
    """L³×L³ 实对称稀疏矩阵，L=2 时重复的键自动相加"""
    n = params.n_sites
    src, dst, amp = real_space_bonds(params)
    hop = sp.coo_matrix((amp, (src, dst)), shape=(n, n))
    ham = (hop + hop.T + sp.diags(onsite_energies(params))).tocsr()
    ham.sum_duplicates()
    ham.eliminate_zeros()
    return ham


# ---------------------------------------------------------------- 态密度与能隙

def dos(params: LatticeParams, grid_per_axis: int = 64, eta: Optional[float] = None,
        bins_per_eta: int = 4) -> DosHistogram:
    """
    均匀动量网格上两条能带的高斯展宽直方图，按格点归一化（∫D dω = 1）
    """
    if grid_per_axis < 16:
        raise ValueError(f"grid_per_axis 至少为16，当前 {grid_per_axis}")
    if eta is None:
        eta = 0.02 * params.J
    if eta <= 0:
        raise ValueError(f"展宽 η 必须为正，当前 {eta}")

    levels = bath_levels(params, grid_per_axis).ravel()
    n_levels = 2 * levels.size
    width = eta / bins_per_eta
    half_bins = int(math.ceil((levels.max() + 6.0 * eta) / width))
    edges = width * np.arange(-half_bins, half_bins + 1)

    counts_pos, _ = np.histogram(levels, bins=edges[half_bins:])
    counts = np.concatenate([counts_pos[::-1], counts_pos]).astype(float)
    density = gaussian_filter1d(counts / (n_levels * width), sigma=eta / width, mode="constant")
    density = 0.5 * (density + density[::-1])

    spacing = (2.0 * levels.max()) / n_levels
    ragged = eta < spacing
    if ragged:
        logger.warning("展宽 η=%.3g 小于网格平均能级间距 %.3g，直方图会很粗糙", eta, spacing)
    return DosHistogram(bin_edges=edges, density=density, eta=float(eta),
                        grid_per_axis=grid_per_axis, ragged=ragged)


def _abs_d_sq(params: LatticeParams, k) -> float:
    d = bloch_vector(params, k)
    return float(np.dot(d, d))


def _descend(params: LatticeParams, k0) -> Tuple[np.ndarray, float]:
    res = minimize(lambda k: _abs_d_sq(params, k), np.asarray(k0, dtype=float),
                   method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-26, "maxiter": 20000, "maxfev": 20000})
    return np.asarray(res.x), float(res.fun)


def gap(params: LatticeParams, grid_per_axis: int = 64) -> float:
    """min(ω+ - ω-)：网格最小值再用 Nelder-Mead 局部下降细化"""
    axes = momentum_axes(grid_per_axis, params.offsets, params.a)
    dsq = _dsq_from_axes(params, *axes)
    i, j, l = np.unravel_index(int(np.argmin(dsq)), dsq.shape)
    k0 = np.array([axes[0][i], axes[1][j], axes[2][l]])
    _, refined = _descend(params, k0)
    best = min(refined, float(dsq[i, j, l]))
    return 2.0 * math.sqrt(max(best, 0.0))


# ---------------------------------------------------------------- Berry 通量与 Weyl 点

def loop_phase(v00, v10, v11, v01) -> np.ndarray:
    """
    四个顶点按 00→10→11→01 顺序的链变量乘积的 Berry 相位
    正方向为 u×v（u 为第一个下标方向）
    """
    def link(a, b):
        return np.sum(np.conj(a) * b, axis=-1)

    prod = link(v00, v10) * link(v10, v11) * link(v11, v01) * link(v01, v00)
    return -np.angle(prod)


def plaquette_phases(vectors: np.ndarray) -> np.ndarray:
    """
    顶点网格 (Nu+1, Nv+1, dim) 上每个小方格的 Berry 相位，形状 (Nu, Nv)
    """
    return loop_phase(vectors[:-1, :-1], vectors[1:, :-1], vectors[1:, 1:], vectors[:-1, 1:])


def lower_band_vectors(hamiltonians: np.ndarray) -> np.ndarray:
    _, vecs = np.linalg.eigh(hamiltonians)
    return vecs[..., :, 0]


def enclosing_flux(hamiltonian_fn: Callable[[np.ndarray], np.ndarray], center,
                   half_width: float, n: int = 12) -> float:
    """
    下能带穿过以 center 为中心、半边长 half_width 的立方盒的 Berry 通量（外法向）
    每个面 n×n 个小方格
    """
    center = np.asarray(center, dtype=float)
    u = np.linspace(-half_width, half_width, n + 1)
    total = 0.0
    for axis in range(3):
        j, l = (axis + 1) % 3, (axis + 2) % 3
        for sign in (1, -1):
            first, second = (j, l) if sign > 0 else (l, j)
            pts = np.zeros((n + 1, n + 1, 3))
            pts[..., axis] = sign * half_width
            pts[..., first] = u[:, None]
            pts[..., second] = u[None, :]
            vecs = lower_band_vectors(hamiltonian_fn(pts + center))
            total += float(np.sum(plaquette_phases(vecs)))
    return total


def _nearest_image_distance(points: np.ndarray, a: float) -> float:
    """立方区周期像意义下两两最小距离"""
    if len(points) < 2:
        return float("inf")
    period = 2.0 * np.pi / a
    diff = points[:, None, :] - points[None, :, :]
    diff -= period * np.round(diff / period)
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)
    return float(dist.min())


def _dedupe(points: List[np.ndarray], tol: float) -> List[np.ndarray]:
    kept: List[np.ndarray] = []
    for p in points:
        if all(np.linalg.norm(p - q) > tol for q in kept):
            kept.append(p)
    return kept


def find_weyl_nodes(params: LatticeParams, tol: Optional[float] = None,
                    grid_per_axis: int = 32) -> List[WeylNode]:
    """
    网格局部极小 + Nelder-Mead 细化找到 |d| 的零点，折回约化区后去重
    每个点的手性由包围盒的 Berry 通量给出
    """
    if tol is None:
        tol = 1e-8 * params.J
    if not params.gapless:
        logger.warning("M=%.6g 时 |M| ≥ 2J，谱有能隙（%s），没有 Weyl 点", params.M, params.phase)
        return []

    a = params.a
    axes = momentum_axes(grid_per_axis, a=a, centered=True)
    abs_d = np.sqrt(_dsq_from_axes(params, *axes))
    step = 2.0 * np.pi / (grid_per_axis * a)
    threshold = 2.5 * params.J * step * a
    minima = (minimum_filter(abs_d, size=3, mode="wrap") == abs_d) & (abs_d < threshold)
    candidates = np.argwhere(minima)
    logger.debug("Weyl 点候选 %d 个", len(candidates))

    found = []
    for i, j, l in candidates:
        k, fun = _descend(params, [axes[0][i], axes[1][j], axes[2][l]])
        if 2.0 * math.sqrt(max(fun, 0.0)) < tol:
            period = 2.0 * np.pi / a
            found.append(np.mod(k + period / 2, period) - period / 2)
    cubic = _dedupe(found, NODE_MERGE_TOL / a)
    reduced = _dedupe([reduce_momentum(k, a) for k in cubic], NODE_MERGE_TOL / a)

    half = min(0.1, 0.25 * _nearest_image_distance(np.array(cubic), a) * a) / a if cubic else 0.1
    nodes = []
    for k in reduced:
        flux = enclosing_flux(lambda kk: bloch_hamiltonian(params, kk), k, half)
        chirality = int(round(flux / (2 * np.pi)))
        freq = float(np.trace(bloch_hamiltonian(params, k)).real / 2)
        nodes.append(WeylNode(momentum=k, frequency=freq, chirality=chirality, flux=flux))

    total = sum(n.chirality for n in nodes)
    if total != 0:
        logger.warning("Weyl 点手性之和为 %d，不为零；可能有节点遗漏", total)
    logger.info("M=%.6g 找到 %d 个 Weyl 点（约化区）", params.M, len(nodes))
    nodes.sort(key=lambda n: (round(float(n.momentum[0]), 6), round(float(n.momentum[2]), 6)))
    return nodes
