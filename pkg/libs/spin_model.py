"""
束缚态介导的有效自旋模型
- 耦合 J^{αα'}(r) = g² Re G_{αα'}(E=0; r)，截断在 |r| ≤ s
- 每个晶格位点放一个发射体（两个子格都放），Bloch 矩阵
  h_{αα'}(k) = Δ_α δ_{αα'} + Σ_r J^{αα'}(r) e^{-ik·r}
- 能带切片、能带交叉、k_y=0 平面 Berry 曲率、三维 Weyl 点
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.ndimage import minimum_filter
from scipy.optimize import minimize, minimize_scalar

from libs.emitter_dynamics import EmitterSpec, PopulationTrace
from libs.greens_functions import (
    DEFAULT_GRID, ComplexEnergy, default_etas, eta_extrapolate, green_field, green_pair,
)
from libs.lattice_model import (
    NODE_MERGE_TOL, SUBLATTICES, LatticeParams, WeylNode, enclosing_flux, loop_phase,
    lower_band_vectors, reduce_momentum,
)

logger = logging.getLogger(__name__)

PAIRS = (("A", "A"), ("A", "B"), ("B", "A"), ("B", "B"))
IMAG_FLAG = 1e-3
# 只对量级不小于最大耦合千分之一的项检查虚部
SIGNIFICANT = 1e-3
LINEARITY_LIMIT = 0.1
MAX_SUBDIVISION = 3


@dataclass
class CouplingMap:
    """
    tensors[(α, α')][rx+R, ry+R, rz+R] = J^{αα'}(r)，R = floor(s)
    范围外或子格奇偶不符的位置为 0，由 masks 标记
    """

    s: float
    M: float
    g: float
    J: float
    a: float
    tensors: Dict[Tuple[str, str], np.ndarray]
    masks: Dict[Tuple[str, str], np.ndarray]
    detunings: Dict[str, float]
    max_imag_ratio: float = 0.0
    flagged: bool = False
    _terms: Dict = field(default_factory=dict, repr=False)

    @property
    def reach(self) -> int:
        return (next(iter(self.tensors.values())).shape[0] - 1) // 2

    def coupling(self, displacement, pair=("A", "A")) -> float:
        R = self.reach
        r = np.asarray(displacement, dtype=int)
        if np.any(np.abs(r) > R):
            return 0.0
        return float(self.tensors[tuple(pair)][tuple(r + R)])

    def entries(self) -> Dict[Tuple[Tuple[int, int, int], Tuple[str, str]], float]:
        """{(位移, 子格对): 耦合}，只含截断范围内的合法位移"""
        out = {}
        R = self.reach
        for pair in PAIRS:
            for idx in np.argwhere(self.masks[pair]):
                r = tuple(int(v) for v in idx - R)
                out[(r, pair)] = float(self.tensors[pair][tuple(idx)])
        return out

    def __len__(self) -> int:
        return int(sum(np.count_nonzero(m) for m in self.masks.values()))

    def terms(self, pair) -> Tuple[np.ndarray, np.ndarray]:
        """(位移数组 (n,3), 耦合值 (n,))，缓存"""
        pair = tuple(pair)
        if pair not in self._terms:
            idx = np.argwhere(self.masks[pair])
            self._terms[pair] = (idx - self.reach, self.tensors[pair][self.masks[pair]])
        return self._terms[pair]


@dataclass
class SpinBandCut:
    kz: np.ndarray
    omega_minus: np.ndarray
    omega_plus: np.ndarray
    kx: float
    ky: float

    @property
    def gap(self) -> np.ndarray:
        return self.omega_plus - self.omega_minus


@dataclass
class BerryField:
    """
    k_y 固定平面上 (k_x, k_z) 网格的下能带 Berry 通量
    flux[ix, iz] 为每个小方格的相位（法向 +k_y），curvature = flux / 面积
    omega_x / omega_z 为跨 k_y 平面的小方格给出的面内分量
    """

    kx: np.ndarray
    kz: np.ndarray
    ky: float
    flux: np.ndarray
    flagged: np.ndarray
    omega_x: np.ndarray
    omega_z: np.ndarray
    cell_area: float

    @property
    def curvature(self) -> np.ndarray:
        return self.flux / self.cell_area

    @property
    def total_flux(self) -> float:
        return float(np.sum(self.flux))

    @property
    def chern_number(self) -> int:
        return int(round(self.total_flux / (2 * np.pi)))

    @property
    def n_flagged(self) -> int:
        return int(np.count_nonzero(self.flagged))

    def flagged_momenta(self) -> List[Tuple[float, float]]:
        return [(float(self.kx[i]), float(self.kz[j])) for i, j in np.argwhere(self.flagged)]


# ---------------------------------------------------------------- 耦合

def _sphere_masks(R: int, s: float) -> Dict[Tuple[str, str], np.ndarray]:
    r = np.arange(-R, R + 1)
    rx, ry, rz = np.meshgrid(r, r, r, indexing="ij")
    inside = rx ** 2 + ry ** 2 + rz ** 2 <= s * s + 1e-9
    even = (rx + ry) % 2 == 0
    return {pair: inside & (even if pair[0] == pair[1] else ~even) for pair in PAIRS}


def effective_couplings(params: LatticeParams, g: float, s: float,
                        grid: int = DEFAULT_GRID) -> CouplingMap:
    """
    对每个源子格，在 z = iη（三个 η）上做一次 FFT 得到整场，再 η→0 外推
    结果按 J^{αα'}(r) = J^{α'α}(-r) 严格对称化
    """
    if params.phase == "gapped":
        raise ValueError(f"有效自旋模型只对 |M| ≤ 2J 定义，当前 M={params.M}")
    if s < 0:
        raise ValueError(f"截断距离 s 必须非负，当前 {s}")
    if g > 0.5 * params.J:
        logger.warning("g=%.3g > 0.5J，超出 Born-Markov 近似的可信范围", g)
    R = int(math.floor(s + 1e-9))
    if 2 * R + 1 > grid:
        raise ValueError(f"截断 s={s} 超出 grid={grid} 能分辨的范围")

    r = np.arange(-R, R + 1)
    disp = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1)
    masks = _sphere_masks(R, s)
    raw: Dict[Tuple[str, str], np.ndarray] = {}
    max_ratio = 0.0
    for source in SUBLATTICES:
        cube, _ = eta_extrapolate(
            lambda eta, src=source: green_field(params, ComplexEnergy(0.0, eta), src, grid).block(disp),
            default_etas(params))
        cube = g * g * cube
        for target in SUBLATTICES:
            pair = (target, source)
            mask = masks[pair]
            re = np.where(mask, cube.real, 0.0)
            im = np.where(mask, cube.imag, 0.0)
            scale = np.max(np.abs(re)) if np.any(mask) else 0.0
            if scale > 0:
                significant = np.abs(re) > SIGNIFICANT * scale
                if np.any(significant):
                    ratio = float(np.max(np.abs(im[significant]) / np.abs(re[significant])))
                    max_ratio = max(max_ratio, ratio)
            raw[pair] = re

    tensors: Dict[Tuple[str, str], np.ndarray] = {}
    for alpha, beta in (("A", "A"), ("A", "B"), ("B", "B")):
        mirrored = raw[(beta, alpha)][::-1, ::-1, ::-1]
        sym = 0.5 * (raw[(alpha, beta)] + mirrored)
        tensors[(alpha, beta)] = sym
        tensors[(beta, alpha)] = sym[::-1, ::-1, ::-1].copy()

    flagged = max_ratio > IMAG_FLAG
    if flagged:
        logger.warning("耦合虚部/实部最大比值 %.3g 超过 %.0e，存在耗散通道", max_ratio, IMAG_FLAG)
    detunings = {"A": -float(tensors[("A", "A")][R, R, R]), "B": -float(tensors[("B", "B")][R, R, R])}
    cmap = CouplingMap(s=float(s), M=params.M, g=float(g), J=params.J, a=params.a,
                       tensors=tensors, masks=masks, detunings=detunings,
                       max_imag_ratio=max_ratio, flagged=flagged)
    logger.info("有效耦合 M=%.4g g=%.4g s=%.4g：%d 项", params.M, g, s, len(cmap))
    return cmap


# ---------------------------------------------------------------- Bloch 矩阵

def spin_bloch(couplings: CouplingMap, k, chunk: int = 4096) -> np.ndarray:
    """任意动量（形状 (...,3)）上的 2×2 自旋 Bloch 矩阵，直接傅里叶求和"""
    k = np.asarray(k, dtype=float)
    flat = k.reshape(-1, 3) * couplings.a
    out = np.zeros((flat.shape[0], 2, 2), dtype=complex)
    for i, alpha in enumerate(SUBLATTICES):
        out[:, i, i] += couplings.detunings[alpha]
    for pair in PAIRS:
        i, j = SUBLATTICES.index(pair[0]), SUBLATTICES.index(pair[1])
        disp, vals = couplings.terms(pair)
        if vals.size == 0:
            continue
        for start in range(0, flat.shape[0], chunk):
            block = flat[start:start + chunk]
            out[start:start + chunk, i, j] += np.exp(-1j * block @ disp.T) @ vals
    return out.reshape(k.shape[:-1] + (2, 2))


def spin_bloch_grid(couplings: CouplingMap, kx, ky, kz) -> np.ndarray:
    """乘积网格上的 Bloch 矩阵，按轴可分离收缩，形状 (nx, ny, nz, 2, 2)"""
    R = couplings.reach
    r = np.arange(-R, R + 1) * couplings.a
    ex, ey, ez = (np.exp(-1j * np.outer(np.atleast_1d(np.asarray(q, dtype=float)), r))
                  for q in (kx, ky, kz))
    shape = (ex.shape[0], ey.shape[0], ez.shape[0])
    out = np.zeros(shape + (2, 2), dtype=complex)
    for pair in PAIRS:
        i, j = SUBLATTICES.index(pair[0]), SUBLATTICES.index(pair[1])
        out[..., i, j] = np.einsum("ai,bj,ck,ijk->abc", ex, ey, ez, couplings.tensors[pair],
                                   optimize=True)
    for i, alpha in enumerate(SUBLATTICES):
        out[..., i, i] += couplings.detunings[alpha]
    return out


def _gap(couplings: CouplingMap, k) -> float:
    h = spin_bloch(couplings, np.asarray(k, dtype=float))
    dz = 0.5 * (h[0, 0] - h[1, 1]).real
    return 2.0 * math.sqrt(dz * dz + abs(h[0, 1]) ** 2)


def spin_band_cut(couplings: CouplingMap, kx: float = math.pi / 2, ky: float = 0.0,
                  n_points: int = 401) -> SpinBandCut:
    """沿 k_z ∈ [-π/a, π/a] 的能带"""
    kz = np.linspace(-np.pi, np.pi, n_points) / couplings.a
    h = spin_bloch_grid(couplings, kx, ky, kz)[0, 0]
    vals = np.linalg.eigvalsh(h)
    return SpinBandCut(kz=kz, omega_minus=vals[:, 0], omega_plus=vals[:, 1], kx=kx, ky=ky)


def spin_band_crossings(couplings: CouplingMap, kx: float = math.pi / 2, ky: float = 0.0,
                        n_points: int = 401, tol: float = 1e-6) -> List[float]:
    """
    切片上能隙的局部极小用有界 Brent 细化，
    细化后的能隙小于 tol × 能带尺度的记为交叉点
    """
    cut = spin_band_cut(couplings, kx, ky, n_points)
    gap = cut.gap[:-1]  # 去掉与 -π 重复的 +π
    kz = cut.kz[:-1]
    scale = float(np.max(np.abs(np.concatenate([cut.omega_minus, cut.omega_plus]))))
    if scale == 0:
        return []
    n = gap.size
    step = kz[1] - kz[0]
    crossings: List[float] = []
    for i in range(n):
        if gap[i] <= gap[i - 1] and gap[i] <= gap[(i + 1) % n]:
            res = minimize_scalar(lambda q: _gap(couplings, (kx, ky, q)),
                                  bounds=(kz[i] - step, kz[i] + step), method="bounded",
                                  options={"xatol": 1e-12})
            if res.fun < tol * scale:
                q = float(reduce_momentum((kx, ky, res.x), couplings.a)[2])
                if all(abs(q - c) > 1e-6 for c in crossings):
                    crossings.append(q)
    return sorted(crossings)


# ---------------------------------------------------------------- Berry 曲率

def _vectors_on_grid(couplings: CouplingMap, kx, ky, kz) -> np.ndarray:
    return lower_band_vectors(spin_bloch_grid(couplings, kx, ky, kz))


def _resolve_plaquette(couplings, kx0, kz0, size, ky, depth) -> Tuple[float, bool]:
    """把可疑方格细分为 3×3，递归至多 MAX_SUBDIVISION 层"""
    sub = size / 3.0
    xs = kx0 + sub * np.arange(4)
    zs = kz0 + sub * np.arange(4)
    vecs = _vectors_on_grid(couplings, xs, ky, zs)[:, 0]          # [ix, iz]
    phases = loop_phase(vecs[:-1, :-1], vecs[:-1, 1:], vecs[1:, 1:], vecs[1:, :-1])
    total, unresolved = 0.0, False
    for i in range(3):
        for j in range(3):
            p = float(phases[i, j])
            if abs(p) > np.pi / 2:
                if depth < MAX_SUBDIVISION:
                    p, bad = _resolve_plaquette(couplings, xs[i], zs[j], sub, ky, depth + 1)
                    unresolved |= bad
                else:
                    unresolved = True
            total += p
    return total, unresolved


def berry_curvature_plane(couplings: CouplingMap, grid_n: int = 64,
                          ky: float = 0.0) -> BerryField:
    """
    (k_x, k_z) 环面上的链变量 Berry 通量；顶点取在半格点上
    相位绝对值超过 π/2 的方格细分，3 层后仍不收敛则标记
    """
    a = couplings.a
    h = 2 * np.pi / (grid_n * a)
    vx = -np.pi / a + (np.arange(grid_n + 1) + 0.5) * h       # 顶点，最后一个与第一个相差一周
    vz = vx.copy()
    vecs = _vectors_on_grid(couplings, vx, ky, vz)[:, 0]         # [ix, iz]
    # 回路先沿 k_z 后沿 k_x，法向 ẑ×x̂ = ŷ
    flux = loop_phase(vecs[:-1, :-1], vecs[:-1, 1:], vecs[1:, 1:], vecs[1:, :-1])
    flagged = np.zeros_like(flux, dtype=bool)
    for i, j in np.argwhere(np.abs(flux) > np.pi / 2):
        p, bad = _resolve_plaquette(couplings, vx[i], vz[j], h, ky, 1)
        flagged[i, j] = bad
        if not bad:
            flux[i, j] = p
    if flagged.any():
        logger.warning("Berry 平面上 %d 个方格在 %d 层细分后仍含简并点", int(flagged.sum()),
                       MAX_SUBDIVISION)

    cx = vx[:-1] + 0.5 * h
    cz = vz[:-1] + 0.5 * h
    half = np.array([ky - 0.5 * h, ky + 0.5 * h])
    # Ω_x：(k_y, k_z) 小方格，法向 ŷ×ẑ = x̂
    vy = _vectors_on_grid(couplings, cx, half, vz)               # [ix, iy, iz]
    omega_x = loop_phase(vy[:, 0, :-1], vy[:, 1, :-1], vy[:, 1, 1:], vy[:, 0, 1:]) / h ** 2
    # Ω_z：(k_x, k_y) 小方格，法向 x̂×ŷ = ẑ
    vz_ = _vectors_on_grid(couplings, vx, half, cz)              # [ix, iy, iz]
    omega_z = loop_phase(vz_[:-1, 0], vz_[1:, 0], vz_[1:, 1], vz_[:-1, 1]) / h ** 2

    field_ = BerryField(kx=cx, kz=cz, ky=ky, flux=flux, flagged=flagged,
                        omega_x=omega_x, omega_z=omega_z, cell_area=h * h)
    logger.info("Berry 平面 M=%.4g s=%.4g：总通量 %.6g（Chern %d），标记 %d 个方格",
                couplings.M, couplings.s, field_.total_flux, field_.chern_number, field_.n_flagged)
    return field_


# ---------------------------------------------------------------- 三维节点

def _linearity_ratio(couplings: CouplingMap, k0: np.ndarray, delta: float) -> float:
    worst = 0.0
    for axis in range(3):
        for sign in (1, -1):
            e = np.zeros(3)
            e[axis] = sign * delta
            f1 = _gap(couplings, k0 + e)
            f2 = _gap(couplings, k0 + 2 * e)
            denom = abs(4 * f1 - f2)
            ratio = abs(f2 - 2 * f1) / denom if denom > 0 else float("inf")
            worst = max(worst, ratio)
    return worst


def classify_spin_touchings(couplings: CouplingMap, tol: float = 1e-6, scan_n: int = 32,
                            max_candidates: int = 48) -> Tuple[List[WeylNode], List[WeylNode]]:
    """
    立方区 scan_n³ 网格找能隙局部极小，Nelder-Mead 细化到简并点，
    再按三个方向的有限差分判断线性色散
    :return: (weyl, non_weyl)
    """
    a = couplings.a
    axis = (2 * np.pi * np.arange(scan_n) / scan_n - np.pi) / a
    h = spin_bloch_grid(couplings, axis, axis, axis)
    gap = 2.0 * np.sqrt((0.5 * (h[..., 0, 0] - h[..., 1, 1]).real) ** 2 + np.abs(h[..., 0, 1]) ** 2)
    scale = float(gap.max())
    if scale == 0:
        return [], []
    minima = (minimum_filter(gap, size=3, mode="wrap") == gap) & (gap < 0.2 * scale)
    candidates = np.argwhere(minima)
    order = np.argsort(gap[tuple(candidates.T)])
    candidates = candidates[order[:max_candidates]]

    found: List[np.ndarray] = []
    for i, j, l in candidates:
        k0 = np.array([axis[i], axis[j], axis[l]])
        res = minimize(lambda k: (0.5 * _gap(couplings, k)) ** 2, k0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-30, "maxiter": 6000, "maxfev": 6000})
        if 2.0 * math.sqrt(max(res.fun, 0.0)) < tol * scale:
            k = reduce_momentum(res.x, a)
            if all(np.linalg.norm(k - q) > NODE_MERGE_TOL / a for q in found):
                found.append(k)

    weyl: List[WeylNode] = []
    non_weyl: List[WeylNode] = []
    delta = 2 * np.pi / (100 * a)
    for k in found:
        others = [np.linalg.norm(k - q) for q in found if q is not k]
        half = min(0.1 / a, 0.3 * min(others)) if others else 0.1 / a
        flux = enclosing_flux(lambda kk: spin_bloch(couplings, kk), k, half)
        chirality = int(round(flux / (2 * np.pi)))
        freq = float(np.trace(spin_bloch(couplings, k)).real / 2)
        node = WeylNode(momentum=k, frequency=freq, chirality=chirality, flux=flux)
        ratio = _linearity_ratio(couplings, k, delta)
        if ratio < LINEARITY_LIMIT and chirality != 0:
            weyl.append(node)
        else:
            non_weyl.append(node)
            logger.warning("k=%s 处能带接触非线性（比值 %.3g，手性 %d），不计为 Weyl 点",
                           np.round(k, 6), ratio, chirality)
    weyl.sort(key=lambda n: tuple(np.round(n.momentum, 6)))
    return weyl, non_weyl


def find_spin_weyl_nodes(couplings: CouplingMap, tol: float = 1e-6,
                         scan_n: int = 32) -> List[WeylNode]:
    weyl, _ = classify_spin_touchings(couplings, tol, scan_n)
    total = sum(n.chirality for n in weyl)
    if weyl and total != 0:
        logger.warning("自旋模型 Weyl 点手性之和为 %d", total)
    logger.info("自旋模型 M=%.4g s=%.4g：%d 个 Weyl 点", couplings.M, couplings.s, len(weyl))
    return weyl


def exchange_coupling(params: LatticeParams, emitter1: EmitterSpec, emitter2: EmitterSpec,
                      grid: int = DEFAULT_GRID) -> float:
    """J12 = g1 g2 Re G_{α2α1}(0; r2 - r1)，η→0 外推"""
    r12 = np.subtract(emitter2.site, emitter1.site)
    pair = (emitter2.sublattice, emitter1.sublattice)
    value, _ = eta_extrapolate(
        lambda eta: green_pair(params, ComplexEnergy(0.0, eta), r12, pair, grid),
        default_etas(params))
    return float(emitter1.coupling * emitter2.coupling * np.real(value))


def effective_exchange_trace(j12: float, residue: float, times: Sequence[float],
                             dressed: bool = False) -> PopulationTrace:
    """
    两发射体有效模型：布居 Z²cos²(ωt)、Z²sin²(ωt)，半周期 π / (2ω)
    dressed=False 时 ω = J12；dressed=True 时 ω = Z·J12，
    即交换经由权重为 Z 的束缚态发生，与精确演化的振荡频率更接近
    """
    t = np.asarray(times, dtype=float)
    z2 = residue ** 2
    rate = residue * j12 if dressed else j12
    pops = np.stack([z2 * np.cos(rate * t) ** 2, z2 * np.sin(rate * t) ** 2], axis=1)
    return PopulationTrace(times=t, populations=pops, photon_total=1.0 - pops.sum(axis=1))


def exchange_half_period(j12: float, residue: float = 1.0) -> float:
    """π / (2|Z·J12|)；residue 取 1 即裸耦合的半周期"""
    rate = residue * j12
    return math.pi / (2.0 * abs(rate)) if rate != 0 else float("inf")
