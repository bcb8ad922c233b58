"""束缚态：久期方程、临界失谐、本征求解对照、幂律指数与留数"""
# Copyright (c) 2025 [687jsassd]
# MIT License
import unittest

import numpy as np

from libs.bound_states import (
    BoundState, bound_state_wavefunction, critical_detuning, critical_detuning_eigensolve,
    eigensolve_bound_state, find_bound_state_energy, fit_power_law, residue, residue_point,
    residue_sweep,
)
from libs.emitter_dynamics import EmitterSpec
from libs.errors import NoBoundStateError, NumericalError
from libs.greens_functions import ComplexEnergy, green_local
from tests import lattice

CENTRE = (10, 10, 10)
EMITTER_WEIGHT = 1 / (1 + 0.25 * 0.25)


class BoundStateEnergyTest(unittest.TestCase):

    def test_band_center_root_at_m0(self):
        energy = find_bound_state_energy(lattice(M=0.0), EmitterSpec(CENTRE, 0.0, 0.5))
        self.assertEqual(energy, 0.0)

    def test_decoupled_energy_is_detuning(self):
        self.assertEqual(find_bound_state_energy(lattice(M=0.7), EmitterSpec(CENTRE, 0.013, 0.0)), 0.013)

    def test_critical_detuning_gives_zero_energy(self):
        params = lattice(M=1.0)
        crit = critical_detuning(params, 0.5)
        self.assertNotEqual(crit.delta_c, 0.0)
        energy = find_bound_state_energy(params, EmitterSpec(CENTRE, crit.delta_c, 0.5))
        self.assertLess(abs(energy), 1e-6)

    def test_secular_self_consistency(self):
        params = lattice(M=0.6)
        em = EmitterSpec(CENTRE, 0.02, 0.5)
        energy = find_bound_state_energy(params, em)
        sigma = 0.25 * green_local(params, ComplexEnergy(energy, 0.0), "A")
        self.assertLess(abs(energy - em.detuning - sigma.real), 1e-9)

    def test_no_root_far_outside(self):
        with self.assertRaises(NoBoundStateError):
            find_bound_state_energy(lattice(M=0.0), EmitterSpec(CENTRE, 100.0, 0.5))


class CriticalDetuningTest(unittest.TestCase):

    def test_zero_at_m0(self):
        self.assertLess(abs(critical_detuning(lattice(), 0.5, M=0.0).delta_c), 1e-12)

    def test_antisymmetry(self):
        plus = critical_detuning(lattice(), 0.5, M=1.0)
        minus = critical_detuning(lattice(), 0.5, M=-1.0)
        self.assertAlmostEqual(plus.delta_c, -minus.delta_c, delta=max(plus.extrapolation_error, 1e-10))
        on_b = critical_detuning(lattice(), 0.5, M=1.0, alpha="B")
        self.assertAlmostEqual(on_b.delta_c, -plus.delta_c, delta=1e-10)

    def test_zero_coupling(self):
        self.assertEqual(critical_detuning(lattice(M=1.0), 0.0).delta_c, 0.0)

    def test_gapped_rejected(self):
        with self.assertRaises(ValueError):
            critical_detuning(lattice(), 0.5, M=2.5)

    def test_matches_eigensolve(self):
        params = lattice(L=20)
        from_sum = critical_detuning(params, 0.5, M=1.0, grid=20).delta_c
        from_eig = critical_detuning_eigensolve(params, 0.5, M=1.0)
        self.assertAlmostEqual(from_eig, from_sum, delta=1e-6)


class WavefunctionTest(unittest.TestCase):

    def test_normalized_with_expected_weight(self):
        params = lattice(L=20, M=0.0)
        state = bound_state_wavefunction(params, EmitterSpec(CENTRE, 0.0, 0.5))
        self.assertAlmostEqual(state.norm(), 1.0, delta=1e-9)
        self.assertAlmostEqual(state.emitter_weight, EMITTER_WEIGHT, delta=0.01 * EMITTER_WEIGHT)
        self.assertEqual(state.photon_field.shape, (20, 20, 20))
        self.assertEqual(state.as_vector().size, 20 ** 3 + 1)

    def test_matches_shift_invert_eigenvector(self):
        for L in (10, 14):
            params = lattice(L=L, M=0.5)
            c = L // 2
            delta = critical_detuning(params, 0.5, grid=L).delta_c
            em = EmitterSpec((c, c, c), delta, 0.5)
            state = bound_state_wavefunction(params, em)
            energy, vec = eigensolve_bound_state(params, em, sigma=state.energy + 0.01)
            with self.subTest(L=L):
                self.assertAlmostEqual(energy, state.energy, delta=1e-8)
                overlap = abs(np.vdot(vec, state.as_vector()))
                self.assertGreater(overlap, 0.999)

    def test_singular_shift_reported_as_numerical_failure(self):
        params = lattice(L=4, M=0.0, boundary="periodic")
        with self.assertRaises(NumericalError):
            eigensolve_bound_state(params, EmitterSpec((0, 0, 0), 0.0, 0.0), sigma=0.0)

    def test_display_scale(self):
        params = lattice(L=10, M=0.0)
        state = bound_state_wavefunction(params, EmitterSpec((5, 5, 5), 0.0, 0.5))
        scale = 0.5 * state.emitter_weight
        np.testing.assert_allclose(state.display_field() * scale, state.abs_field(), atol=1e-14)

    def test_emitter_outside_lattice(self):
        with self.assertRaises(ValueError):
            bound_state_wavefunction(lattice(L=10), EmitterSpec((10, 0, 0), 0.0, 0.5))


class PowerLawFitTest(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.states = {}
        for M in (0.0, 1.0, 2.0):
            params = lattice(L=20, M=M)
            delta = critical_detuning(params, 0.5).delta_c
            cls.states[M] = bound_state_wavefunction(params, EmitterSpec(CENTRE, delta, 0.5))

    def _synthetic(self, exponent):
        L = 20
        d = np.indices((L, L, L)) - np.array(CENTRE)[:, None, None, None]
        dist = np.sqrt(np.sum(d.astype(float) ** 2, axis=0))
        field = np.where(dist > 0, np.power(np.maximum(dist, 1.0), -exponent), 0.0)
        return BoundState(energy=0.0, emitter_amplitude=1.0, photon_field=field.astype(complex),
                          residue=1.0, emitter=EmitterSpec(CENTRE), params=lattice(L=L))

    def test_synthetic_exponent(self):
        state = self._synthetic(3.0)
        for direction in ("xy", "z"):
            fit = fit_power_law(state, direction)
            with self.subTest(direction=direction):
                self.assertAlmostEqual(fit.exponent, 3.0, delta=1e-6)
                self.assertAlmostEqual(fit.r_squared, 1.0, places=9)
                self.assertFalse(fit.flagged)
        self.assertEqual(fit_power_law(state, "xy", "A").n_points, 16)

    def test_invalid_requests(self):
        state = self._synthetic(2.0)
        with self.assertRaises(ValueError):
            fit_power_law(state, "z", "B")
        with self.assertRaises(ValueError):
            fit_power_law(state, "xy", fit_range=(1, 8))
        with self.assertRaises(ValueError):
            fit_power_law(state, "xy", fit_range=(2, 9))
        with self.assertRaises(ValueError):
            fit_power_law(state, "diagonal")

    def test_isotropic_inverse_square_at_m0(self):
        state = self.states[0.0]
        xy = fit_power_law(state, "xy").exponent
        z = fit_power_law(state, "z").exponent
        self.assertAlmostEqual(xy, 2.0, delta=0.2)
        self.assertAlmostEqual(z, 2.0, delta=0.2)
        self.assertLess(abs(xy - z), 0.15)

    def test_exponent_window_and_anisotropy(self):
        anisotropy = []
        for M, state in self.states.items():
            for direction in ("xy", "z"):
                for sublattice in (None, "A", "B"):
                    try:
                        fit = fit_power_law(state, direction, sublattice)
                    except ValueError:
                        continue
                    if M > 0:
                        with self.subTest(M=M, direction=direction, sublattice=sublattice):
                            self.assertGreaterEqual(fit.exponent, 1.4)
                            self.assertLessEqual(fit.exponent, 3.1)
            anisotropy.append(fit_power_law(state, "z").exponent - fit_power_law(state, "xy").exponent)
        self.assertGreaterEqual(anisotropy[-1], 0.5)
        self.assertTrue(all(b >= a - 1e-9 for a, b in zip(anisotropy, anisotropy[1:])))


class ResidueTest(unittest.TestCase):

    def test_decoupled_residue(self):
        self.assertEqual(residue(lattice(), EmitterSpec(CENTRE, 0.3, 0.0), 0.3), 1.0)

    def test_residue_at_m0(self):
        point = residue_point(lattice(), 0.5, 0.0)
        self.assertEqual(point.energy, 0.0)
        self.assertAlmostEqual(point.residue, EMITTER_WEIGHT, delta=0.01 * EMITTER_WEIGHT)
        self.assertAlmostEqual(point.population, point.residue ** 2)

    def test_plateau_nearly_flat_in_m(self):
        points = residue_sweep(lattice(), 0.5, [0.0, 0.5, 1.0, 1.5, 2.0])
        base = points[0].population
        self.assertLess(max(abs(p.population - base) for p in points), 0.05)
        self.assertEqual([p.M for p in points], [0.0, 0.5, 1.0, 1.5, 2.0])


if __name__ == "__main__":
    unittest.main()
