"""
实验引擎
按实验类型分派到各物理模块，写出 CSV/JSON 结果与 manifest.json
"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional

import numpy as np
from scipy.sparse.linalg import ArpackError

from config import VERSION, ExperimentConfig
from libs.animes_rich import status
from libs.bound_states import (
    critical_detuning, bound_state_wavefunction, find_bound_state_energy, fit_power_law,
    residue, residue_point,
)
from libs.emitter_dynamics import (
    EmitterSpec, ExcitationState, evolve, markov_prediction, markov_rate, revival_time,
    two_emitter_exchange,
)
from libs.errors import ConfigError, NumericalError
from libs.event_manager import exp_manager
from libs.lattice_model import (
    LatticeParams, band_energies, dos, find_weyl_nodes, gap, sublattice_of,
)
from libs.logger import log_exceptions
from libs.practical_funcs import ArtifactWriter, generate_run_id
from libs.spin_model import (
    berry_curvature_plane, classify_spin_touchings, effective_couplings,
    effective_exchange_trace, exchange_coupling, exchange_half_period, spin_band_crossings,
    spin_band_cut,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
# 模块内未转换的线性代数/浮点失败，统一按数值失败（退出码3）处理
NUMERICAL_FAILURES = (np.linalg.LinAlgError, FloatingPointError, ArpackError)


@dataclass
class ResultManifest:
    version: str
    experiment: str
    config: dict
    artifacts: List[dict]
    wall_time_s: float
    run_id: str
    out_dir: str = ""
    summary: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "experiment": self.experiment,
            "run_id": self.run_id,
            "config": self.config,
            "artifacts": self.artifacts,
            "wall_time_s": self.wall_time_s,
        }


def _tag(value: float) -> str:
    """文件名里的参数标记，如 M=1.0 -> "1" """
    return format(float(value), "g")


class ExperimentEngine:
    """
    一次只运行一个实验；参数扫描（M 列表、s 列表）交给线程池，结果按提交顺序收集
    """

    def __init__(self, config: ExperimentConfig, out_dir: Optional[str] = None,
                 jobs: int = 1, deterministic: bool = False):
        self.config = config
        self.out_dir = out_dir or config.output_dir
        self.jobs = max(1, int(jobs))
        self.deterministic = deterministic
        self.writer: Optional[ArtifactWriter] = None
        self.resolved: Dict[str, Any] = {}
        self._critical_cache: Dict[tuple, float] = {}

    # 便捷属性
    @property
    def lattice(self) -> LatticeParams:
        return self.config.lattice

    @property
    def numerics(self):
        return self.config.numerics

    def map(self, func: Callable, items: Iterable) -> list:
        items = list(items)
        if self.jobs <= 1 or len(items) <= 1:
            return [func(x) for x in items]
        with ThreadPoolExecutor(max_workers=min(self.jobs, len(items))) as pool:
            return list(pool.map(func, items))

    def critical(self, lattice: LatticeParams, g: float, alpha: str) -> float:
        key = (lattice, float(g), alpha)
        if key not in self._critical_cache:
            crit = critical_detuning(lattice, g, grid=self.numerics.grid, alpha=alpha)
            self._critical_cache[key] = crit.delta_c
        return self._critical_cache[key]

    def emitters(self, lattice: Optional[LatticeParams] = None) -> List[EmitterSpec]:
        """把 detuning = "critical" 解析成当前 M 下的 Δ_c"""
        lattice = lattice or self.lattice
        out = []
        for em in self.config.emitters:
            if em.critical:
                alpha = sublattice_of(em.site[0], em.site[1])
                out.append(em.resolve(self.critical(lattice, em.coupling, alpha)))
            else:
                out.append(em.resolve())
        return out

    def coupling(self) -> float:
        """扫描类实验的耦合强度：有发射体时取第一个发射体，否则取 numerics.g"""
        if self.config.emitters:
            return self.config.emitters[0].coupling
        return self.numerics.g

    def write_summary(self, name: str, summary: dict) -> dict:
        """写出摘要 JSON；所有摘要都带上晶格边界条件"""
        summary.setdefault("boundary", self.lattice.boundary)
        self.writer.json(name, summary)
        return summary

    @log_exceptions(logger)
    def run(self) -> ResultManifest:
        kind = self.config.experiment
        if not exp_manager.is_exist_func(kind):
            raise ConfigError(f"未知实验类型 '{kind}'", source=self.config.source)
        start = time.perf_counter()
        self.writer = ArtifactWriter(self.out_dir, self.deterministic)
        logger.info("开始实验 %s（%s），输出目录 %s，jobs=%d", kind,
                    self.config.description or "无描述", self.out_dir, self.jobs)
        try:
            with status(f"正在运行 {kind} ..."):
                summary = exp_manager.run(kind, self)
        except NUMERICAL_FAILURES as e:
            self.writer.remove_all()
            raise NumericalError(f"实验 {kind} 数值失败：{type(e).__name__}: {e}") from e
        except Exception:
            self.writer.remove_all()
            raise

        config_echo = self.config.to_dict()
        if self.resolved:
            config_echo["resolved"] = self.resolved
        manifest = ResultManifest(
            version=VERSION,
            experiment=kind,
            config=config_echo,
            artifacts=self.writer.describe(),
            wall_time_s=round(time.perf_counter() - start, 3),
            run_id=generate_run_id(self.config.to_dict()),
            out_dir=self.out_dir,
            summary=summary,
        )
        try:
            self.writer.json(MANIFEST_NAME, manifest.to_dict())
        except OSError:
            self.writer.remove_all()
            raise
        logger.info("实验 %s 完成，用时 %.2f s，写出 %d 个文件", kind, manifest.wall_time_s,
                    len(manifest.artifacts))
        return manifest


# ---------------------------------------------------------------- 各实验

def run_bands(engine: ExperimentEngine) -> dict:
    lattice, num = engine.lattice, engine.numerics
    axis = np.linspace(-np.pi, np.pi, num.bands_grid) / lattice.a
    kx, kz = np.meshgrid(axis, axis, indexing="ij")
    k = np.stack([kx, np.zeros_like(kx), kz], axis=-1)
    lower, upper = band_energies(lattice, k)
    engine.writer.csv("bands.csv", ["kx", "kz", "omega_minus", "omega_plus"],
                      zip(kx.ravel(), kz.ravel(), lower.ravel(), upper.ravel()),
                      note=f"k_y = 0 plane, M = {lattice.M:g}")
    nodes = find_weyl_nodes(lattice, grid_per_axis=num.node_scan)
    summary = {
        "M": lattice.M,
        "phase": lattice.phase,
        "gap": gap(lattice, num.dos_grid),
        "n_nodes": len(nodes),
        "nodes": [n.to_dict() for n in nodes],
    }
    return engine.write_summary("bands_summary.json", summary)


def run_dos(engine: ExperimentEngine) -> dict:
    lattice, num = engine.lattice, engine.numerics
    hist = dos(lattice, num.dos_grid, num.eta * lattice.J)
    engine.writer.csv("dos.csv", ["omega", "dos"], zip(hist.centers, hist.density),
                      note=f"grid {num.dos_grid}^3, eta = {num.eta:g}")
    try:
        exponent = hist.power_law_exponent(0.1 * lattice.J, 0.5 * lattice.J)
    except NumericalError as e:
        logger.warning("态密度幂律拟合失败：%s", e)
        exponent = None
    summary = {
        "M": lattice.M,
        "eta": hist.eta,
        "grid": num.dos_grid,
        "integral": hist.integral(),
        "exponent": exponent,
        "fit_window": [0.1 * lattice.J, 0.5 * lattice.J],
        "ragged": hist.ragged,
    }
    return engine.write_summary("dos_summary.json", summary)


def run_dynamics(engine: ExperimentEngine) -> dict:
    lattice, num = engine.lattice, engine.numerics
    emitters = engine.emitters()
    engine.resolved["emitters"] = [em.to_dict() for em in emitters]
    trace = evolve(lattice, emitters, ExcitationState.excited(lattice, len(emitters), 0),
                   num.t_max, num.dt_out)
    single = len(emitters) == 1

    columns = ["t"]
    columns += ["pop_e"] if single else [f"pop_e{i + 1}" for i in range(len(emitters))]
    columns.append("pop_photon")
    data = [trace.times] + [trace.populations[:, i] for i in range(len(emitters))]
    data.append(trace.photon_total)

    summary: Dict[str, Any] = {"M": lattice.M, "L": lattice.L,
                               "emitters": [em.to_dict() for em in emitters]}
    if single and num.markov:
        hist = dos(lattice, num.dos_grid, num.eta * lattice.J)
        markov = markov_prediction(lattice, emitters[0], hist, num.t_max, num.dt_out)
        columns.append("markov")
        data.append(markov.populations[:, 0])
        summary["markov_rate"] = markov_rate(emitters[0], hist)
    engine.writer.csv("dynamics.csv", columns, zip(*data))

    if num.plateau_window:
        lo, hi = num.plateau_window
        plateau, spread = trace.window_average(lo, hi)
        summary["plateau_window"] = [lo, hi]
    else:
        plateau, spread = trace.plateau()
        summary["plateau_window"] = [0.75 * float(trace.times[-1]), float(trace.times[-1])]
    summary["plateau"] = plateau
    summary["plateau_std"] = spread
    summary["final_population"] = float(trace.populations[-1, 0])
    summary["norm_error"] = trace.norm_error()
    summary["revival_time"] = revival_time(lattice)
    logger.info("L=%d 晶格上最快波包回到发射体的时间 %.4g", lattice.L, summary["revival_time"])

    if single and emitters[0].coupling > 0:
        try:
            energy = find_bound_state_energy(lattice, emitters[0], num.grid)
            z = residue(lattice, emitters[0], energy, num.grid)
            summary.update({"E_BS": energy, "residue": z, "residue_Z2": z * z,
                            "plateau_minus_Z2": plateau - z * z})
        except NumericalError as e:
            logger.warning("留数计算失败，摘要中不给出 Z：%s", e)
            summary.update({"E_BS": None, "residue": None, "residue_Z2": None})
    return engine.write_summary("summary.json", summary)


def run_boundstate(engine: ExperimentEngine) -> dict:
    lattice, num = engine.lattice, engine.numerics
    emitter = engine.emitters()[0]
    engine.resolved["emitters"] = [emitter.to_dict()]
    energy_inf = find_bound_state_energy(lattice, emitter, num.grid)
    state = bound_state_wavefunction(lattice, emitter, energy_inf)
    try:
        z_inf = residue(lattice, emitter, energy_inf, num.grid)
    except NumericalError as e:
        logger.warning("无限晶格留数计算失败：%s", e)
        z_inf = None

    L = lattice.L
    x, y, z = (c.ravel() for c in np.indices((L, L, L)))
    sub = np.where((x + y) % 2 == 0, "A", "B")
    amp = state.abs_field().ravel()
    display = state.display_field().ravel()
    engine.writer.csv("boundstate_field.csv", ["x", "y", "z", "sublattice", "abs_C", "display"],
                      zip(x, y, z, sub, amp, display),
                      note=f"emitter at {list(emitter.site)}, E_BS = {state.energy:.10g}")

    fits = []
    pooled = {}
    for direction in ("xy", "z"):
        for sublattice in (None, "A", "B"):
            try:
                fit = fit_power_law(state, direction, sublattice, num.fit_range)
            except ValueError as e:
                logger.debug("%s/%s 不拟合：%s", direction, sublattice or "pooled", e)
                continue
            fits.append(fit.to_dict())
            if sublattice is None:
                pooled[direction] = fit
    summary = {
        "M": lattice.M,
        "L": L,
        "E_BS": state.energy,
        "E_BS_infinite": energy_inf,
        "Z": state.residue,
        "Z_infinite": z_inf,
        "emitter_amplitude": state.emitter_amplitude,
        "delta": emitter.detuning,
        "delta_c": emitter.detuning if engine.config.emitters[0].critical else None,
        "gamma_xy": pooled["xy"].exponent if "xy" in pooled else None,
        "gamma_z": pooled["z"].exponent if "z" in pooled else None,
        "flagged": any(f["flagged"] for f in fits),
        "fits": fits,
    }
    return engine.write_summary("powerlaw.json", summary)


def run_residue(engine: ExperimentEngine) -> dict:
    lattice, num = engine.lattice, engine.numerics
    g = engine.coupling()
    alpha = "A"
    if engine.config.emitters:
        site = engine.config.emitters[0].site
        alpha = sublattice_of(site[0], site[1])
    M_values = num.M_list or [f * lattice.J for f in (0.0, 0.5, 1.0, 1.5, 2.0)]
    points = engine.map(lambda M: residue_point(lattice, g, M, num.grid, alpha), M_values)
    engine.writer.csv("residue.csv", ["M", "delta_c", "E_BS", "Z", "Z2"],
                      ((p.M, p.delta_c, p.energy, p.residue, p.population) for p in points),
                      note=f"g = {g:g}, detuning = delta_c(M)")
    ref = points[0].population
    summary = {
        "g": g,
        "sublattice": alpha,
        "points": [{"M": p.M, "delta_c": p.delta_c, "E_BS": p.energy, "Z": p.residue,
                    "Z2": p.population} for p in points],
        "Z2_reference": ref,
        "max_deviation": max(abs(p.population - ref) for p in points),
    }
    return engine.write_summary("residue_summary.json", summary)


def run_exchange(engine: ExperimentEngine) -> dict:
    lattice, num = engine.lattice, engine.numerics
    M_values = num.M_list or [lattice.M]
    t_max = num.t_max

    def one(M):
        lat = lattice.with_(M=float(M))
        em1, em2 = engine.emitters(lat)
        exchange = two_emitter_exchange(lat, em1, em2, t_max, num.dt_out)
        j12 = exchange_coupling(lat, em1, em2, num.grid)
        energy = find_bound_state_energy(lat, em1, num.grid)
        z = residue(lat, em1, energy, num.grid)
        prediction = effective_exchange_trace(j12, z, exchange.trace.times)
        return lat, (em1, em2), exchange, j12, z, prediction

    results = engine.map(one, M_values)
    per_M = []
    for lat, ems, exchange, j12, z, prediction in results:
        trace = exchange.trace
        engine.writer.csv(f"exchange_M{_tag(lat.M)}.csv",
                          ["t", "pop_e1", "pop_e2", "pop_photon", "prediction_e2"],
                          zip(trace.times, trace.populations[:, 0], trace.populations[:, 1],
                              trace.photon_total, prediction.populations[:, 1]),
                          note=f"M = {lat.M:g}, emitters {list(ems[0].site)} and {list(ems[1].site)}")
        t_peak, height = exchange.first_max_time, exchange.first_max_population
        per_M.append({
            "M": lat.M,
            "delta": ems[0].detuning,
            "J12": j12,
            "residue": z,
            "plateau_single": z * z,
            "first_max_time": t_peak,
            "first_max_population": height,
            "first_max_minus_plateau": height - z * z,
            "half_period_predicted": exchange_half_period(j12),
            "half_period_dressed": exchange_half_period(j12, z),
        })
    summary = {"t_max": t_max, "results": per_M}
    return engine.write_summary("exchange_summary.json", summary)


def run_spinbands(engine: ExperimentEngine) -> dict:
    lattice, num = engine.lattice, engine.numerics
    g = engine.coupling()
    cmaps = engine.map(lambda s: effective_couplings(lattice, g, s, num.grid), num.s_list)
    per_s = []
    for s, cmap in zip(num.s_list, cmaps):
        cut = spin_band_cut(cmap, num.kx, num.ky, num.n_points)
        crossings = spin_band_crossings(cmap, num.kx, num.ky, num.n_points, num.tol)
        engine.writer.csv(f"spinbands_s{_tag(s)}.csv", ["kz", "omega_minus", "omega_plus"],
                          zip(cut.kz, cut.omega_minus, cut.omega_plus),
                          note=f"M = {lattice.M:g}, g = {g:g}, s = {s:g}, kx = {num.kx:.10g}, ky = {num.ky:.10g}")
        per_s.append({"s": s, "n_terms": len(cmap), "crossings": crossings,
                      "min_gap": float(np.min(cut.gap)),
                      "detunings": cmap.detunings, "flagged": cmap.flagged})
    with_cross = [p for p in per_s if p["crossings"]]
    convergence = None
    if len(with_cross) >= 2:
        prev, last = with_cross[-2]["crossings"], with_cross[-1]["crossings"]
        convergence = max(min(abs(k - q) for q in prev) for k in last)
    summary = {"M": lattice.M, "g": g, "kx": num.kx, "ky": num.ky, "cuts": per_s,
               "crossing_shift_last_two": convergence}
    return engine.write_summary("spinbands_summary.json", summary)


def run_berry(engine: ExperimentEngine) -> dict:
    lattice, num = engine.lattice, engine.numerics
    g = engine.coupling()
    s = max(num.s_list)
    cmap = effective_couplings(lattice, g, s, num.grid)
    plane = berry_curvature_plane(cmap, num.berry_grid, num.ky)
    kx, kz = np.meshgrid(plane.kx, plane.kz, indexing="ij")
    engine.writer.csv("berry.csv", ["kx", "kz", "omega_y", "omega_x", "omega_z", "flagged"],
                      zip(kx.ravel(), kz.ravel(), plane.curvature.ravel(),
                          plane.omega_x.ravel(), plane.omega_z.ravel(), plane.flagged.ravel()),
                      note=f"M = {lattice.M:g}, s = {s:g}, ky = {num.ky:.10g}")
    weyl, non_weyl = classify_spin_touchings(cmap, num.tol, num.node_scan)
    summary = {
        "M": lattice.M,
        "s": s,
        "total_flux": plane.total_flux,
        "total_flux_over_2pi": plane.total_flux / (2 * math.pi),
        "chern_number": plane.chern_number,
        "n_flagged": plane.n_flagged,
        "flagged_momenta": plane.flagged_momenta(),
        "nodes": [n.to_dict() for n in weyl],
        "non_weyl_touchings": [n.to_dict() for n in non_weyl],
        "chirality_sum": sum(n.chirality for n in weyl),
    }
    return engine.write_summary("berry_summary.json", summary)


def run_nodes(engine: ExperimentEngine) -> dict:
    lattice, num = engine.lattice, engine.numerics
    nodes = find_weyl_nodes(lattice, grid_per_axis=num.node_scan)
    engine.writer.csv("nodes.csv", ["kx", "ky", "kz", "frequency", "chirality"],
                      ((*n.momentum, n.frequency, n.chirality) for n in nodes),
                      note=f"M = {lattice.M:g}, reduced zone")
    summary = {
        "M": lattice.M,
        "phase": lattice.phase,
        "gap": gap(lattice, num.dos_grid),
        "n_nodes": len(nodes),
        "chirality_sum": sum(n.chirality for n in nodes),
        "nodes": [n.to_dict() for n in nodes],
    }
    return engine.write_summary("nodes_summary.json", summary)


def reg_experiments():
    exp_manager.reg("bands", run_bands, "k_y = 0 平面上的浴能带与 Weyl 点")
    exp_manager.reg("dos", run_dos, "浴态密度直方图与低频幂律")
    exp_manager.reg("dynamics", run_dynamics, "单激发精确演化与 Markov 对比")
    exp_manager.reg("boundstate", run_boundstate, "束缚态光子场与幂律拟合")
    exp_manager.reg("residue", run_residue, "Δ = Δ_c(M) 时的留数 Z²(M)")
    exp_manager.reg("exchange", run_exchange, "两发射体激发交换")
    exp_manager.reg("spinbands", run_spinbands, "有效自旋模型能带切片")
    exp_manager.reg("berry", run_berry, "自旋模型 Berry 曲率平面与 Weyl 点")
    exp_manager.reg("nodes", run_nodes, "浴的 Weyl 点与手性")


reg_experiments()
