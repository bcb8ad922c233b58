"""
单激发子空间中发射体与有限 Weyl 晶格的精确时间演化，以及马尔可夫参考曲线

态矢量排列：前 L³ 个分量是光子场 C_r（C 序），后面依次是各发射体振幅 C_j
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import logging
import math
from dataclasses import dataclass, asdict
from typing import Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.signal import find_peaks
from scipy.special import jv

from libs.errors import PropagationError
from libs.lattice_model import (
    DosHistogram, LatticeParams, SiteIndex, build_real_space_hamiltonian, sublattice_of,
)

logger = logging.getLogger(__name__)

NORM_DRIFT_TOL = 1e-6
MAX_TIME_J = 1e4


@dataclass(frozen=True)
class EmitterSpec:
    """二能级发射体；子格由所在位点决定"""

    site: Tuple[int, int, int]
    detuning: float = 0.0
    coupling: float = 0.5

    def __post_init__(self):
        site = tuple(int(c) for c in self.site)
        if len(site) != 3:
            raise ValueError(f"发射体位点必须是三维整数坐标，当前 {self.site}")
        object.__setattr__(self, "site", site)

    @property
    def sublattice(self) -> str:
        return sublattice_of(self.site[0], self.site[1])

    def to_dict(self) -> dict:
        data = asdict(self)
        data["site"] = list(self.site)
        data["sublattice"] = self.sublattice
        return data


@dataclass
class ExcitationState:
    emitter_amplitudes: np.ndarray
    photon_field: np.ndarray

    def norm(self) -> float:
        return float(math.sqrt(np.sum(np.abs(self.emitter_amplitudes) ** 2)
                               + np.sum(np.abs(self.photon_field) ** 2)))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.photon_field),
                               np.ravel(self.emitter_amplitudes)]).astype(complex)

    @classmethod
    def from_vector(cls, vector: np.ndarray, n_emitters: int) -> "ExcitationState":
        vector = np.asarray(vector)
        split = vector.size - n_emitters
        return cls(emitter_amplitudes=vector[split:].copy(), photon_field=vector[:split].copy())

    @classmethod
    def excited(cls, params: LatticeParams, n_emitters: int, which: int = 0) -> "ExcitationState":
        """第 which 个发射体处于激发态，浴中没有光子"""
        if not 0 <= which < n_emitters:
            raise ValueError(f"发射体编号 {which} 超出范围")
        amps = np.zeros(n_emitters, dtype=complex)
        amps[which] = 1.0
        return cls(emitter_amplitudes=amps, photon_field=np.zeros(params.n_sites, dtype=complex))


@dataclass
class PopulationTrace:
    times: np.ndarray
    populations: np.ndarray  # (n_t, n_emitters)
    photon_total: np.ndarray

    @property
    def n_emitters(self) -> int:
        return self.populations.shape[1]

    def norm_error(self) -> float:
        return float(np.max(np.abs(self.populations.sum(axis=1) + self.photon_total - 1.0)))

    def window_average(self, t_lo: float, t_hi: float, emitter: int = 0) -> Tuple[float, float]:
        mask = (self.times >= t_lo - 1e-12) & (self.times <= t_hi + 1e-12)
        if not np.any(mask):
            raise ValueError(f"时间窗 [{t_lo}, {t_hi}] 内没有采样点")
        window = self.populations[mask, emitter]
        return float(np.mean(window)), float(np.std(window))

    def plateau(self, emitter: int = 0) -> Tuple[float, float]:
        """最后四分之一时间段的平均值与标准差（标准差即振荡幅度）"""
        t_end = float(self.times[-1])
        return self.window_average(0.75 * t_end, t_end, emitter)

    def first_maximum(self, emitter: int = 1, prominence: float = 0.02) -> Tuple[float, float]:
        pops = self.populations[:, emitter]
        peaks, _ = find_peaks(pops, prominence=prominence)
        if peaks.size == 0:
            logger.warning("发射体 %d 的布居没有明显峰值，退回全局最大值", emitter)
            idx = int(np.argmax(pops))
        else:
            idx = int(peaks[0])
        return float(self.times[idx]), float(pops[idx])


@dataclass
class ExchangeResult:
    trace: PopulationTrace
    first_max_time: float
    first_max_population: float


def _validate_emitters(params: LatticeParams, emitters: Sequence[EmitterSpec]):
    seen = set()
    for em in emitters:
        if not all(0 <= c < params.L for c in em.site):
            raise ValueError(f"发射体位点 {em.site} 超出 L={params.L} 的晶格")
        if em.site in seen:
            raise ValueError(f"位点 {em.site} 上有多个发射体")
        seen.add(em.site)


def build_single_excitation_hamiltonian(params: LatticeParams,
                                        emitters: Sequence[EmitterSpec]) -> sp.csr_matrix:
    """H = H_B + Σ_j Δ_j σ_ee + g_j (c_r σ_eg + h.c.)，维数 L³ + n_e"""
    _validate_emitters(params, emitters)
    n = params.n_sites
    ne = len(emitters)
    bath = build_real_space_hamiltonian(params)
    rows, cols, vals = [], [], []
    for j, em in enumerate(emitters):
        site = SiteIndex(*em.site).flat(params.L)
        rows += [n + j, site, n + j]
        cols += [site, n + j, n + j]
        vals += [em.coupling, em.coupling, em.detuning]
    extra = sp.coo_matrix((vals, (rows, cols)), shape=(n + ne, n + ne))
    ham = (sp.block_diag((bath, sp.csr_matrix((ne, ne))), format="csr") + extra).tocsr()
    ham.sum_duplicates()
    return ham


def gershgorin_bounds(ham: sp.spmatrix) -> Tuple[float, float]:
    diag = ham.diagonal().real
    radius = np.asarray(abs(ham).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min(diag - radius)), float(np.max(diag + radius))


class ChebyshevPropagator:
    """
    e^{-iHt} 的切比雪夫展开：
    c_n = (2 - δ_n0) (-i)^n J_n(a t) e^{-ibt}，H = b + a·H̃，谱界来自 Gershgorin 圆盘
    """

    def __init__(self, hamiltonian: sp.spmatrix, tol: float = 1e-15, max_arg: float = 40.0):
        ham = sp.csr_matrix(hamiltonian)
        lo, hi = gershgorin_bounds(ham)
        self.center = 0.5 * (hi + lo)
        self.half_width = max(0.5 * (hi - lo) * 1.01, 1e-12)
        self.tol = tol
        self.max_arg = max_arg
        ident = sp.identity(ham.shape[0], format="csr")
        self._scaled = ((ham - self.center * ident) / self.half_width).tocsr()
        self.last_order = 0

    def coefficients(self, dt: float) -> np.ndarray:
        x = self.half_width * dt
        n_max = int(abs(x) + 10.0 * abs(x) ** (1.0 / 3.0) + 30)
        orders = np.arange(n_max + 1)
        bessel = jv(orders, x)
        significant = np.nonzero(np.abs(bessel) > self.tol)[0]
        last = int(significant[-1]) if significant.size else 0
        orders = orders[:last + 1]
        weights = np.where(orders == 0, 1.0, 2.0)
        return weights * np.power(-1j, orders) * bessel[:last + 1] * np.exp(-1j * self.center * dt)

    def _apply(self, psi: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        prev = psi
        acc = coeffs[0] * prev
        if coeffs.size == 1:
            return acc
        cur = self._scaled @ psi
        acc = acc + coeffs[1] * cur
        for c in coeffs[2:]:
            nxt = 2.0 * (self._scaled @ cur) - prev
            acc += c * nxt
            prev, cur = cur, nxt
        return acc

    def step(self, psi: np.ndarray, dt: float) -> np.ndarray:
        """时间步可以为负（时间反演）；参数 a|dt| 过大时拆成子步"""
        n_sub = max(1, int(math.ceil(abs(self.half_width * dt) / self.max_arg)))
        sub_dt = dt / n_sub
        coeffs = self.coefficients(sub_dt)
        self.last_order = coeffs.size - 1
        for _ in range(n_sub):
            psi = self._apply(psi, coeffs)
        return psi


def _check_initial(params: LatticeParams, emitters, initial: ExcitationState):
    if initial.emitter_amplitudes.size != len(emitters):
        raise ValueError("初态发射体振幅个数与发射体数目不一致")
    if initial.photon_field.size != params.n_sites:
        raise ValueError("初态光子场维数与晶格不一致")
    if abs(initial.norm() - 1.0) > 1e-9:
        raise ValueError(f"初态未归一化，范数 {initial.norm():.12g}")


def _check_duration(params: LatticeParams, t_max: float):
    if t_max <= 0:
        raise ValueError(f"t_max 必须为正，当前 {t_max}")
    if t_max * max(params.J, 1.0) > MAX_TIME_J:
        raise ValueError(f"t_max·J 不能超过 {MAX_TIME_J:g}")


def evolve(params: LatticeParams, emitters: Sequence[EmitterSpec], initial: ExcitationState,
           t_max: float, dt_out: float = 0.1) -> PopulationTrace:
    """完整哈密顿量在单激发子空间的幺正演化，每 dt_out 采样一次"""
    _check_duration(params, t_max)
    if dt_out <= 0:
        raise ValueError(f"dt_out 必须为正，当前 {dt_out}")
    _check_initial(params, emitters, initial)

    ham = build_single_excitation_hamiltonian(params, emitters)
    prop = ChebyshevPropagator(ham)
    n_steps = int(round(t_max / dt_out))
    times = np.arange(n_steps + 1) * dt_out
    ne = len(emitters)
    n = params.n_sites

    pops = np.empty((n_steps + 1, ne))
    photon = np.empty(n_steps + 1)
    psi = initial.as_vector()
    norm0 = float(np.linalg.norm(psi))

    def record(i, vec):
        prob = np.abs(vec) ** 2
        pops[i] = prob[n:]
        photon[i] = prob[:n].sum()

    record(0, psi)
    for i in range(1, n_steps + 1):
        psi = prop.step(psi, dt_out)
        drift = abs(float(np.linalg.norm(psi)) - norm0)
        if drift > NORM_DRIFT_TOL:
            raise PropagationError("时间演化范数漂移超限", t=float(times[i]), drift=drift,
                                   order=prop.last_order, half_width=prop.half_width,
                                   center=prop.center, dt=dt_out)
        record(i, psi)

    logger.info("演化完成：L=%d，%d 个发射体，t_max=%.4g，切比雪夫阶数 %d",
                params.L, ne, t_max, prop.last_order)
    return PopulationTrace(times=times, populations=pops, photon_total=photon)


def propagate(params: LatticeParams, emitters: Sequence[EmitterSpec],
              state: ExcitationState, t: float) -> ExcitationState:
    """把态演化时间 t（可为负）后返回"""
    _check_initial(params, emitters, state)
    prop = ChebyshevPropagator(build_single_excitation_hamiltonian(params, emitters))
    return ExcitationState.from_vector(prop.step(state.as_vector(), t), len(emitters))


def two_emitter_exchange(params: LatticeParams, emitter1: EmitterSpec, emitter2: EmitterSpec,
                         t_max: float = 60.0, dt_out: float = 0.1) -> ExchangeResult:
    """发射体1初始激发，返回两发射体的布居与发射体2的第一个极大"""
    if emitter1.sublattice != emitter2.sublattice:
        raise ValueError("两个发射体必须在同一子格上")
    emitters = [emitter1, emitter2]
    trace = evolve(params, emitters, ExcitationState.excited(params, 2, 0), t_max, dt_out)
    t_peak, height = trace.first_maximum(1)
    logger.info("发射体2第一个极大：t=%.4g，布居 %.4g", t_peak, height)
    return ExchangeResult(trace=trace, first_max_time=t_peak, first_max_population=height)


def markov_rate(emitter: EmitterSpec, dos: DosHistogram) -> float:
    """Γ_M = 2π g² D(Δ)"""
    return float(2.0 * np.pi * emitter.coupling ** 2 * dos.at(emitter.detuning))


def markov_prediction(params: LatticeParams, emitter: EmitterSpec, dos: DosHistogram,
                      t_max: float, dt_out: float = 0.1) -> PopulationTrace:
    """指数衰减参考曲线 exp(-Γ_M t)"""
    _check_duration(params, t_max)
    rate = markov_rate(emitter, dos)
    times = np.arange(int(round(t_max / dt_out)) + 1) * dt_out
    pops = np.exp(-rate * times)[:, None]
    return PopulationTrace(times=times, populations=pops, photon_total=1.0 - pops[:, 0])


def revival_time(params: LatticeParams) -> float:
    """最快波包绕晶格一圈回到发射体的时间 L a / v_max，v_max = 2√3 J a"""
    if params.J == 0:
        return float("inf")
    return params.L / (2.0 * math.sqrt(3.0) * params.J)
