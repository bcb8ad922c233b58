"""命令行入口、配置解析、输出文件与清单"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import json
import os
import tempfile
import textwrap
import unittest
from unittest import mock

import numpy as np

from config import EXPERIMENT_KINDS, RECIPES, ExperimentConfig, list_recipes, load_recipe, parse_config_text
from experiment_engine import ExperimentEngine
from libs.errors import ConfigError, NumericalError
from libs.event_manager import exp_manager
from libs.lattice_model import LatticeParams
from libs.practical_funcs import UNITS_LINE, sha256_file
from main import main

SMALL_BANDS = """\
experiment = "bands"

[lattice]
M = 0.5
L = 4

[numerics]
bands_grid = 9
dos_grid = 16
node_scan = 16
"""


def _write(directory: str, name: str, text: str) -> str:
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(textwrap.dedent(text))
    return path


def _read_json(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


class ConfigParsingTest(unittest.TestCase):

    def test_missing_experiment(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config_text("[lattice]\nM = 0.0\n")
        self.assertIn("no experiment specified", str(ctx.exception))
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_experiment_from_command_line(self):
        cfg = parse_config_text("[lattice]\nM = 0.5\n", experiment="bands")
        self.assertEqual(cfg.experiment, "bands")
        self.assertEqual(cfg.lattice.M, 0.5)
        with self.assertRaises(ConfigError):
            parse_config_text('experiment = "dos"\n', experiment="bands")

    def test_unknown_key_reports_line(self):
        text = 'experiment = "bands"\n\n[lattice]\nM = 0.0\nmass = 1.0\n'
        with self.assertRaises(ConfigError) as ctx:
            parse_config_text(text, source="bad.toml")
        self.assertEqual(ctx.exception.line, 5)
        self.assertTrue(str(ctx.exception).startswith("bad.toml:5:"))

    def test_unknown_top_level_key(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config_text('experiment = "bands"\nseed = 3\n')
        self.assertEqual(ctx.exception.line, 2)

    def test_wrong_type_reports_line(self):
        text = 'experiment = "bands"\n[lattice]\nL = "twenty"\n'
        with self.assertRaises(ConfigError) as ctx:
            parse_config_text(text)
        self.assertEqual(ctx.exception.line, 3)

    def test_syntax_error_reports_line(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config_text('experiment = "bands"\n[lattice\nM = 0\n')
        self.assertIsNotNone(ctx.exception.line)

    def test_invalid_values(self):
        cases = {
            "odd L": 'experiment = "bands"\n[lattice]\nL = 5\n',
            "unknown kind": 'experiment = "photons"\n',
            "emitter count": 'experiment = "exchange"\n[[emitters]]\nsite = [1, 1, 1]\n',
            "site range": 'experiment = "dynamics"\n[lattice]\nL = 4\n[[emitters]]\nsite = [4, 0, 0]\n',
            "detuning word": 'experiment = "dynamics"\n[[emitters]]\nsite = [1, 1, 1]\ndetuning = "zero"\n',
            "fit range": 'experiment = "boundstate"\n[lattice]\nL = 12\n[[emitters]]\nsite = [6, 6, 6]\n'
                         '[numerics]\nfit_range = [2, 8]\n',
            "mass list": 'experiment = "residue"\n[numerics]\nM_list = [0.0, 2.5]\n',
        }
        for name, text in cases.items():
            with self.subTest(case=name):
                with self.assertRaises(ConfigError):
                    parse_config_text(text)

    def test_cross_field_values_report_line(self):
        cases = {
            "plateau beyond t_max": ('experiment = "dynamics"\n[[emitters]]\nsite = [1, 1, 1]\n'
                                     '[numerics]\nt_max = 20.0\nplateau_window = [30.0, 40.0]\n', 6),
            "critical in gap": ('experiment = "boundstate"\n[lattice]\nM = 2.5\n[[emitters]]\n'
                                'site = [10, 10, 10]\ndetuning = "critical"\n', 6),
            "exchange sublattices": ('experiment = "exchange"\n[[emitters]]\nsite = [10, 10, 10]\n'
                                     '[[emitters]]\nsite = [10, 11, 10]\n', 4),
            "spin model in gap": ('experiment = "spinbands"\n[lattice]\nM = 2.5\n', 3),
            "hopping range beyond grid": ('experiment = "berry"\n[numerics]\ngrid = 16\n'
                                          's_list = [9]\n', 4),
        }
        for name, (text, line) in cases.items():
            with self.subTest(case=name):
                with self.assertRaises(ConfigError) as ctx:
                    parse_config_text(text)
                self.assertEqual(ctx.exception.line, line)
                self.assertEqual(ctx.exception.exit_code, 2)

    def test_exchange_mass_scan_allows_critical_emitters(self):
        cfg = parse_config_text('experiment = "exchange"\n[lattice]\nM = 2.5\n'
                                '[[emitters]]\nsite = [10, 10, 10]\ndetuning = "critical"\n'
                                '[[emitters]]\nsite = [10, 10, 12]\ndetuning = "critical"\n'
                                '[numerics]\nM_list = [0.0, 1.0]\n')
        self.assertEqual(cfg.numerics.M_list, [0.0, 1.0])

    def test_critical_emitter(self):
        cfg = parse_config_text('experiment = "boundstate"\n[[emitters]]\nsite = [10, 10, 10]\n'
                                'detuning = "critical"\ncoupling = 0.5\n')
        em = cfg.emitters[0]
        self.assertTrue(em.critical)
        self.assertEqual(em.resolve(0.01).detuning, 0.01)

    def test_all_recipes_parse(self):
        rows = list_recipes()
        self.assertGreaterEqual(len(rows), 14)
        self.assertEqual([r[0] for r in rows], list(RECIPES))
        for name, kind, description in rows:
            with self.subTest(recipe=name):
                self.assertIn(kind, EXPERIMENT_KINDS)
                self.assertTrue(description)
        fig4d = load_recipe("fig4d")
        self.assertEqual(fig4d.numerics.s_list, [9.0])
        self.assertEqual(fig4d.lattice.M, 0.0)
        self.assertEqual(load_recipe("fig1d").emitters[0].coupling, 0.5)


class MainTest(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def _run(self, *args) -> int:
        return main(list(args))

    def _register(self, kind, func):
        for table in (exp_manager._runners, exp_manager._desc):
            patcher = mock.patch.dict(table)
            patcher.start()
            self.addCleanup(patcher.stop)
        exp_manager.reg(kind, func)

    def test_listing(self):
        self.assertEqual(self._run(), 0)
        self.assertEqual(self._run("list"), 0)

    def test_missing_experiment_exit_code(self):
        path = _write(self.tmp, "empty.toml", "[lattice]\nM = 0.0\n")
        self.assertEqual(self._run("--config", path), 2)

    def test_unknown_target(self):
        self.assertEqual(self._run("no_such_recipe"), 2)
        self.assertEqual(self._run("bands"), 2)

    def test_deterministic_output(self):
        path = _write(self.tmp, "bands.toml", SMALL_BANDS)
        outputs = []
        for run in ("a", "b"):
            out = os.path.join(self.tmp, run)
            self.assertEqual(self._run("bands", "--config", path, "--out", out, "--deterministic"), 0)
            outputs.append(out)
        for name in ("bands.csv", "bands_summary.json"):
            with open(os.path.join(outputs[0], name), "rb") as f1, \
                    open(os.path.join(outputs[1], name), "rb") as f2:
                self.assertEqual(f1.read(), f2.read(), name)

        with open(os.path.join(outputs[0], "bands.csv"), "rb") as f:
            raw = f.read()
        self.assertNotIn(b"\r\n", raw)
        lines = raw.decode("utf-8").split("\n")
        self.assertEqual(lines[0], UNITS_LINE)
        self.assertEqual(lines[2], "kx,kz,omega_minus,omega_plus")
        self.assertEqual(len([l for l in lines[3:] if l]), 81)

        manifest = _read_json(os.path.join(outputs[0], "manifest.json"))
        self.assertEqual(manifest["experiment"], "bands")
        self.assertEqual(len(manifest["run_id"]), 8)
        self.assertEqual(manifest["run_id"], _read_json(os.path.join(outputs[1], "manifest.json"))["run_id"])
        self.assertEqual({a["file"] for a in manifest["artifacts"]}, {"bands.csv", "bands_summary.json"})
        for artifact in manifest["artifacts"]:
            path = os.path.join(outputs[0], artifact["file"])
            self.assertEqual(artifact["sha256"], sha256_file(path))
            self.assertEqual(artifact["bytes"], os.path.getsize(path))
        summary = _read_json(os.path.join(outputs[0], "bands_summary.json"))
        self.assertEqual(summary["n_nodes"], 4)
        self.assertEqual(summary["boundary"], "twisted")

    def test_dynamics_columns(self):
        path = _write(self.tmp, "dyn.toml", """\
            experiment = "dynamics"
            [lattice]
            L = 4
            [[emitters]]
            site = [1, 1, 1]
            detuning = 0.3
            coupling = 0.2
            [numerics]
            grid = 16
            dos_grid = 16
            t_max = 2.0
            dt_out = 0.5
            """)
        out = os.path.join(self.tmp, "dyn")
        self.assertEqual(self._run("--config", path, "--out", out), 0)
        with open(os.path.join(out, "dynamics.csv"), encoding="utf-8") as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], UNITS_LINE)
        self.assertEqual(lines[1], "t,pop_e,pop_photon,markov")
        self.assertEqual(len(lines), 2 + 5)
        summary = _read_json(os.path.join(out, "summary.json"))
        self.assertLess(summary["norm_error"], 1e-9)
        self.assertIn("revival_time", summary)

    def test_numerical_failure_exit_code(self):
        path = _write(self.tmp, "far.toml", """\
            experiment = "boundstate"
            [lattice]
            L = 12
            [[emitters]]
            site = [6, 6, 6]
            detuning = 100.0
            [numerics]
            grid = 16
            fit_range = [2, 4]
            """)
        out = os.path.join(self.tmp, "far")
        self.assertEqual(self._run("--config", path, "--out", out), 3)
        self.assertFalse(os.path.exists(os.path.join(out, "manifest.json")))

    def test_failed_run_removes_partial_outputs(self):
        def broken(engine):
            engine.writer.csv("partial.csv", ["x"], [[1.0]])
            raise RuntimeError("boom")

        self._register("broken", broken)
        out = os.path.join(self.tmp, "broken")
        engine = ExperimentEngine(ExperimentConfig(experiment="broken", lattice=LatticeParams(L=4)),
                                  out_dir=out)
        with self.assertRaises(RuntimeError):
            engine.run()
        self.assertEqual(os.listdir(out), [])

    def test_linear_algebra_failure_is_numerical(self):
        def singular(engine):
            engine.writer.csv("partial.csv", ["x"], [[1.0]])
            raise np.linalg.LinAlgError("Singular matrix")

        self._register("singular", singular)
        out = os.path.join(self.tmp, "singular")
        engine = ExperimentEngine(ExperimentConfig(experiment="singular", lattice=LatticeParams(L=4)),
                                  out_dir=out)
        with self.assertRaises(NumericalError) as ctx:
            engine.run()
        self.assertIsInstance(ctx.exception.__cause__, np.linalg.LinAlgError)
        self.assertEqual(os.listdir(out), [])

    def test_linear_algebra_failure_exit_code(self):
        def singular(engine):
            raise np.linalg.LinAlgError("Singular matrix")

        self._register("bands", singular)
        path = _write(self.tmp, "bands.toml", SMALL_BANDS)
        out = os.path.join(self.tmp, "bands")
        self.assertEqual(self._run("--config", path, "--out", out), 3)
        self.assertFalse(os.path.exists(os.path.join(out, "manifest.json")))

    def test_parallel_sweep_matches_serial(self):
        path = _write(self.tmp, "res.toml", """\
            experiment = "residue"
            [numerics]
            grid = 16
            g = 0.5
            M_list = [0.0, 1.0]
            """)
        csvs = []
        for jobs in ("1", "2"):
            out = os.path.join(self.tmp, f"jobs{jobs}")
            self.assertEqual(self._run("--config", path, "--out", out, "--jobs", jobs,
                                       "--deterministic"), 0)
            with open(os.path.join(out, "residue.csv"), "rb") as f:
                csvs.append(f.read())
        self.assertEqual(csvs[0], csvs[1])


class RecipeRunTest(unittest.TestCase):
    """完整配方，耗时较长"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)

    def test_fig2d_power_law(self):
        out = os.path.join(self._tmp.name, "fig2d")
        self.assertEqual(main(["fig2d", "--out", out]), 0)
        summary = _read_json(os.path.join(out, "powerlaw.json"))
        self.assertAlmostEqual(summary["gamma_xy"], 2.0, delta=0.2)
        self.assertAlmostEqual(summary["gamma_z"], 2.0, delta=0.2)

    def test_fig1d_plateau(self):
        out = os.path.join(self._tmp.name, "fig1d")
        self.assertEqual(main(["fig1d", "--out", out]), 0)
        summary = _read_json(os.path.join(out, "summary.json"))
        self.assertAlmostEqual(summary["plateau"], (1 / (1 + 0.25 * 0.25)) ** 2, delta=0.03)
        self.assertAlmostEqual(summary["plateau"], summary["residue_Z2"], delta=0.03)
        self.assertEqual(summary["plateau_window"], [30.0, 40.0])


if __name__ == "__main__":
    unittest.main()
