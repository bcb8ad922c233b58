"""预解式与自能：与稠密求逆对照、对称性、网格收敛与 η 外推"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import itertools
import unittest

import numpy as np

from libs.errors import PoleOnContourError
from libs.greens_functions import (
    ComplexEnergy, eta_extrapolate, green_field, green_local, green_pair, self_energy,
    self_energy_slope,
)
from libs.lattice_model import SiteIndex, bath_levels, dos
from tests import dense_bath, flat_index, lattice

# 态密度 1/|d|² 的布里渊区平均（M=0）
INVERSE_SQUARE_MEAN = 0.25273


class ComplexEnergyTest(unittest.TestCase):

    def test_negative_eta_rejected(self):
        with self.assertRaises(ValueError):
            ComplexEnergy(0.5, -1e-3)

    def test_of_complex(self):
        z = ComplexEnergy.of(1.5 + 0.2j)
        self.assertEqual((z.E, z.eta), (1.5, 0.2))
        self.assertEqual(z.conjugate(), 1.5 - 0.2j)


class DenseInverseTest(unittest.TestCase):
    """L=6 时直接对 (z - H) 求逆作为基准"""

    z = 3.0 + 0.1j

    def _dense_resolvent(self, params):
        n = params.n_sites
        return np.linalg.inv(self.z * np.eye(n) - dense_bath(params))

    def test_green_pair_matches_inverse(self):
        for boundary in ("periodic", "twisted"):
            params = lattice(L=6, M=0.4, boundary=boundary)
            resolvent = self._dense_resolvent(params)
            origin = SiteIndex(2, 2, 2)
            src = origin.flat(params.L)
            for target in itertools.product(range(params.L), repeat=3):
                site = SiteIndex(*target)
                disp = np.array(target) - np.array([2, 2, 2])
                value = green_pair(params, self.z, disp, (site.sublattice, origin.sublattice),
                                   grid=params.L)
                with self.subTest(boundary=boundary, target=target):
                    self.assertAlmostEqual(value, resolvent[site.flat(params.L), src], places=10)

    def test_field_on_lattice_for_b_source(self):
        for boundary in ("periodic", "twisted"):
            params = lattice(L=6, M=-0.8, boundary=boundary)
            resolvent = self._dense_resolvent(params)
            origin = (1, 2, 3)
            self.assertEqual(SiteIndex(*origin).sublattice, "B")
            field = green_field(params, self.z, source="B", grid=params.L)
            column = resolvent[:, flat_index(origin, params.L)].reshape(6, 6, 6)
            with self.subTest(boundary=boundary):
                np.testing.assert_allclose(field.on_lattice(origin, params.L), column, atol=1e-10)

    def test_on_lattice_size_mismatch(self):
        field = green_field(lattice(L=6), self.z, grid=8)
        with self.assertRaises(ValueError):
            field.on_lattice((0, 0, 0), 6)


class GreensPropertiesTest(unittest.TestCase):

    def test_real_part_vanishes_at_band_center(self):
        value = green_local(lattice(M=0.0), ComplexEnergy(0.0, 1e-3))
        self.assertLess(abs(value.real), 1e-12)

    def test_imaginary_part_negative(self):
        params = lattice(M=0.7)
        for E in (-2.0, -0.3, 0.0, 0.9, 2.5):
            for alpha in ("A", "B"):
                with self.subTest(E=E, alpha=alpha):
                    self.assertLess(green_local(params, ComplexEnergy(E, 0.02), alpha, grid=32).imag, 0)

    def test_zero_displacement_equals_local(self):
        params = lattice(M=1.1)
        z = ComplexEnergy(0.4, 0.01)
        for alpha in ("A", "B"):
            with self.subTest(alpha=alpha):
                self.assertAlmostEqual(green_pair(params, z, (0, 0, 0), (alpha, alpha), grid=32),
                                       green_local(params, z, alpha, grid=32), places=13)

    def test_parity_mismatch_is_zero(self):
        params = lattice(M=0.2)
        self.assertEqual(green_pair(params, 0.3 + 0.01j, (1, 0, 0), ("A", "A"), grid=16), 0j)
        self.assertEqual(green_pair(params, 0.3 + 0.01j, (1, 1, 0), ("B", "A"), grid=16), 0j)

    def test_unknown_sublattice_pair(self):
        with self.assertRaises(ValueError):
            green_pair(lattice(), 0.3 + 0.01j, (0, 0, 0), ("A", "C"), grid=16)

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(5)
        params = lattice(M=0.6)
        z = ComplexEnergy(0.7, 0.05)
        for _ in range(20):
            r = rng.integers(-4, 5, size=3)
            pair = tuple(rng.choice(["A", "B"], size=2))
            with self.subTest(r=tuple(r), pair=pair):
                forward = green_pair(params, z, r, pair, grid=24)
                backward = green_pair(params, z, -r, pair[::-1], grid=24)
                self.assertAlmostEqual(forward, backward, places=12)

    def test_hermitian_analyticity(self):
        rng = np.random.default_rng(11)
        params = lattice(M=0.8)
        for _ in range(20):
            z = complex(rng.uniform(-4, 4), rng.uniform(0.01, 0.5))
            r = rng.integers(-5, 6, size=3)
            pair = tuple(rng.choice(["A", "B"], size=2))
            with self.subTest(z=z, r=tuple(r), pair=pair):
                retarded = green_pair(params, z, r, pair, grid=24)
                advanced = green_pair(params, z.conjugate(), -r, pair[::-1], grid=24)
                self.assertAlmostEqual(retarded, advanced.conjugate(), places=12)

    def test_fft_matches_direct_sum(self):
        params = lattice(M=0.9)
        z = ComplexEnergy(-0.5, 0.03)
        field = green_field(params, z, source="A", grid=16)
        for r in [(0, 0, 0), (1, 0, 0), (2, 1, -3), (-5, 4, 7), (3, 3, 3)]:
            target = "A" if (r[0] + r[1]) % 2 == 0 else "B"
            with self.subTest(r=r):
                self.assertAlmostEqual(field.at(r), green_pair(params, z, r, (target, "A"), grid=16),
                                       places=10)
        block = field.block(np.array([[1, 0, 0], [2, 1, -3]]))
        self.assertAlmostEqual(block[1], field.at((2, 1, -3)), places=14)

    def test_grid_convergence(self):
        params = lattice(M=0.5)
        z = ComplexEnergy(0.8, 0.1)
        coarse = green_local(params, z, grid=64)
        fine = green_local(params, z, grid=96)
        self.assertLess(abs(fine - coarse), 1e-3 * abs(fine))

    def test_optical_theorem(self):
        params = lattice(M=0.0)
        eta = 0.05
        z = ComplexEnergy(1.5, eta)
        local = 0.5 * (green_local(params, z, "A") + green_local(params, z, "B"))
        hist = dos(params, grid_per_axis=64, eta=eta)
        expected = float(hist.at(1.5))
        self.assertAlmostEqual(-local.imag / np.pi, expected, delta=0.05 * expected)


class SelfEnergyTest(unittest.TestCase):

    def test_zero_coupling(self):
        self.assertEqual(self_energy(lattice(), 0.0, 0.3 + 0.01j), 0j)
        self.assertEqual(self_energy_slope(lattice(), 0.0, 0.0), 0.0)

    def test_slope_at_band_center(self):
        params = lattice(M=0.0)
        slope = self_energy_slope(params, 0.5, 0.0)
        expected = -0.25 * INVERSE_SQUARE_MEAN
        self.assertLess(slope, 0)
        self.assertAlmostEqual(slope, expected, delta=0.1 * abs(expected))

    def test_slope_scales_with_g_squared(self):
        params = lattice(M=0.0)
        weak = self_energy_slope(params, 0.5, 0.0)
        strong = self_energy_slope(params, 1.0, 0.0)
        self.assertAlmostEqual(strong / weak, 4.0, places=10)

    def test_pole_on_contour(self):
        params = lattice(L=4, M=0.0, boundary="periodic")
        E = float(bath_levels(params, 4).max())
        with self.assertRaises(PoleOnContourError):
            green_local(params, ComplexEnergy(E, 0.0), grid=4)


class EtaExtrapolationTest(unittest.TestCase):

    def test_quadratic_is_exact(self):
        value, err = eta_extrapolate(lambda e: (1 + 2j) + 3 * e - 5j * e * e, (4e-3, 2e-3, 1e-3))
        self.assertAlmostEqual(complex(value), 1 + 2j, places=10)
        self.assertGreaterEqual(float(err), 0.0)

    def test_array_valued(self):
        value, err = eta_extrapolate(lambda e: np.array([e, 2.0 + e * e]), (3e-3, 1e-3, 2e-3))
        np.testing.assert_allclose(value, [0.0, 2.0], atol=1e-10)
        self.assertEqual(err.shape, (2,))

    def test_invalid_etas(self):
        with self.assertRaises(ValueError):
            eta_extrapolate(lambda e: e, (-1e-3, 1e-3, 2e-3))
        with self.assertRaises(ValueError):
            eta_extrapolate(lambda e: e, (1e-3, 2e-3))


if __name__ == "__main__":
    unittest.main()
