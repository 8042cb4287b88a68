import numpy as np
import pytest

from coupled_dipoles import (
    SpectrumCurve,
    build_matrices,
    diagonalize_real_part,
    drive_vector,
    emission_capability,
    forward_intensity,
    intensity_at_angle,
    mode_excitations,
    solve_steady_state,
    total_excitation,
)
from coupled_dipoles.coupling import SteadyState

from conftest import random_cloud
from oracles import TwoAtomOracle


def state_from(amplitudes, detuning=0.0):
    return SteadyState(amplitudes=np.asarray(amplitudes, dtype=complex),
                       detuning=detuning, solver_tag="direct")


class TestForwardIntensity:
    def test_single_atom_has_no_coherent_part(self):
        cloud = random_cloud(1, seed=0)
        state = state_from([0.3 - 0.1j])
        total, coherent, incoherent = forward_intensity(state, cloud)
        assert coherent == 0.0
        assert total == incoherent == pytest.approx(abs(0.3 - 0.1j) ** 2, rel=1e-15)

    def test_phase_matched_amplitudes_add_constructively(self, small_cloud):
        beta = 0.02 - 0.01j
        state = state_from(beta * np.exp(1j * small_cloud.z))
        total, _, _ = forward_intensity(state, small_cloud)
        n = small_cloud.n_atoms
        assert total == pytest.approx(n**2 * abs(beta) ** 2, rel=1e-12)

    def test_two_atom_hand_expansion(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            r1, r2 = rng.uniform(-3, 3, (2, 3))
            if np.linalg.norm(r2 - r1) < 0.3:
                continue
            oracle = TwoAtomOracle(r1, r2)
            cloud = random_cloud(2, seed=0)
            cloud.positions[0], cloud.positions[1] = r1, r2
            m = build_matrices(cloud)
            delta = float(rng.uniform(-8, 8))
            state = solve_steady_state(m, drive_vector(cloud), delta, 1e-3)
            total, coherent, incoherent = forward_intensity(state, cloud)
            exp_total, exp_coherent, exp_incoherent = oracle.forward_intensity(delta, 1e-3)
            assert total == pytest.approx(exp_total, rel=1e-10)
            assert coherent == pytest.approx(exp_coherent, rel=1e-9, abs=1e-20)
            assert incoherent == pytest.approx(exp_incoherent, rel=1e-10)

    def test_split_identity(self, small_cloud):
        rng = np.random.default_rng(9)
        for _ in range(10):
            state = state_from(rng.normal(size=30) + 1j * rng.normal(size=30))
            total, coherent, incoherent = forward_intensity(state, small_cloud)
            assert abs(total - coherent - incoherent) <= 1e-12 * abs(total)

    def test_coherent_part_may_be_negative(self):
        cloud = random_cloud(2, seed=5)
        cloud.positions[0, 2] = 0.0
        cloud.positions[1, 2] = np.pi
        # equal amplitudes half a wavelength apart: b_i e^{-i z_i} cancel
        state = state_from([0.1, 0.1])
        total, coherent, incoherent = forward_intensity(state, cloud)
        assert coherent < 0
        assert total < incoherent


class TestIntensityAtAngle:
    def test_forward_limit_matches_exactly(self, small_cloud):
        state = state_from(np.exp(1j * small_cloud.z) * 1e-3)
        total, _, _ = forward_intensity(state, small_cloud)
        assert intensity_at_angle(state, small_cloud, 0.0) == total

    def test_single_atom_is_isotropic(self):
        cloud = random_cloud(1, seed=1)
        state = state_from([0.2 + 0.3j])
        values = [intensity_at_angle(state, cloud, t) for t in (0.0, 0.1, 0.3, 1.0)]
        assert np.allclose(values, abs(0.2 + 0.3j) ** 2, rtol=1e-14)

    def test_continuity_in_angle(self, small_cloud):
        m = build_matrices(small_cloud)
        state = solve_steady_state(m, drive_vector(small_cloud), 0.0, 1e-3)
        theta = 0.2
        base = intensity_at_angle(state, small_cloud, theta)
        bumped = intensity_at_angle(state, small_cloud, theta + 1e-6)
        assert abs(bumped - base) / base < 1e-4

    def test_azimuth_average_matches_manual_mean(self, small_cloud):
        m = build_matrices(small_cloud)
        state = solve_steady_state(m, drive_vector(small_cloud), -2.0, 1e-3)
        theta = 0.25
        phis = 2 * np.pi * np.arange(16) / 16
        manual = []
        for phi in phis:
            n = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi),
                          np.cos(theta)])
            amp = np.exp(-1j * (small_cloud.positions @ n)) @ state.amplitudes
            manual.append(abs(amp) ** 2)
        averaged = intensity_at_angle(state, small_cloud, theta, azimuth_average=True)
        assert averaged == pytest.approx(np.mean(manual), rel=1e-12)

    def test_rejects_out_of_range_angles(self, small_cloud):
        state = state_from(np.zeros(30, dtype=complex))
        for theta in (-0.1, np.pi / 2, 2.0):
            with pytest.raises(ValueError):
                intensity_at_angle(state, small_cloud, theta)


class TestTotalExcitation:
    def test_single_atom_on_resonance(self):
        omega = 1e-3
        state = state_from([-2j * omega])
        assert total_excitation(state) == pytest.approx(4 * omega**2, rel=1e-14)

    def test_equals_incoherent_part(self, small_cloud):
        rng = np.random.default_rng(17)
        state = state_from(rng.normal(size=30) + 1j * rng.normal(size=30))
        _, _, incoherent = forward_intensity(state, small_cloud)
        assert total_excitation(state) == incoherent

    def test_two_atom_oracle(self):
        r1 = np.array([0.0, 0.0, 0.0])
        r2 = np.array([1.0, 0.7, 2.3])
        oracle = TwoAtomOracle(r1, r2)
        cloud = random_cloud(2, seed=0)
        cloud.positions[0], cloud.positions[1] = r1, r2
        m = build_matrices(cloud)
        state = solve_steady_state(m, drive_vector(cloud), 1.5, 1e-3)
        expected = np.sum(np.abs(oracle.steady_state(1.5, 1e-3)) ** 2)
        assert total_excitation(state) == pytest.approx(expected, rel=1e-10)


class TestBasisChangeConsistency:
    def test_mode_reconstruction_matches_forward_amplitude(self):
        cloud = random_cloud(40, seed=31)
        m = build_matrices(cloud)
        basis = diagonalize_real_part(m)
        _, amplitudes = emission_capability(basis, cloud)
        for delta in (-6.0, 0.0, 4.0):
            state = solve_steady_state(m, drive_vector(cloud), delta, 1e-3)
            p = mode_excitations(basis, state)
            direct = np.exp(-1j * cloud.z) @ state.amplitudes
            assert abs(p @ amplitudes - direct) <= 1e-10 * abs(direct)


class TestSpectrumCurve:
    def grid_curve(self):
        detunings = np.array([-1.0, 0.0, 1.0])
        return SpectrumCurve(
            detunings=detunings,
            i_total=np.array([2.0, 8.0, 4.0]),
            i_coherent=np.array([1.5, 6.0, 3.0]),
            i_incoherent=np.array([0.5, 2.0, 1.0]),
            excitation=np.array([0.5, 2.0, 1.0]),
        )

    def test_normalization_keeps_split_identity(self):
        curve = self.grid_curve().normalized_by_center()
        assert curve.normalized
        assert curve.i_total[1] == 1.0
        assert np.allclose(curve.i_total, curve.i_coherent + curve.i_incoherent)
        assert curve.excitation[1] == 1.0

    def test_normalization_with_external_reference(self):
        curve = self.grid_curve().normalized_by_center(reference=16.0)
        assert curve.i_total[1] == 0.5

    def test_missing_zero_detuning_raises(self):
        curve = self.grid_curve()
        shifted = SpectrumCurve(
            detunings=np.array([-1.0, 0.5, 1.0]),
            i_total=curve.i_total, i_coherent=curve.i_coherent,
            i_incoherent=curve.i_incoherent, excitation=curve.excitation,
        )
        with pytest.raises(ValueError):
            shifted.normalized_by_center()
