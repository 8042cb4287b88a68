import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from coupled_dipoles import (
    GaussianEllipsoid,
    GeometrySpec,
    UniformCylinder,
    atom_count_for_peak_density,
    atom_count_from_density,
    peak_density,
    sample_positions,
)
from coupled_dipoles.geometry import LAMBDA0, PackingError

CYLINDER = UniformCylinder(radius=2 * np.pi, length=6 * np.pi)


class TestAtomCountFromDensity:
    def test_reference_cylinder(self):
        # round(0.3 * pi * (2pi)^2 * 6pi) = round(0.3 * 24 pi^4)
        assert atom_count_from_density(CYLINDER, 0.3) == 701

    def test_double_density_doubles_count(self):
        assert atom_count_from_density(CYLINDER, 0.6) == 1403

    def test_vanishing_density_truncates_to_zero(self):
        shape = UniformCylinder(radius=1.0, length=1.0)
        assert atom_count_from_density(shape, 1e-4) == 0
        with pytest.raises(ValueError):
            GeometrySpec(shape=shape, atom_count=0)

    def test_rejects_nonpositive_density(self):
        with pytest.raises(ValueError):
            atom_count_from_density(CYLINDER, 0.0)


class TestPeakDensity:
    def test_reference_sphere_value(self):
        spec = GeometrySpec(
            shape=GaussianEllipsoid(LAMBDA0, LAMBDA0, LAMBDA0), atom_count=1000
        )
        assert peak_density(spec) == pytest.approx(0.26, abs=0.005)

    def test_cigar_with_same_sigma_product_matches(self):
        sphere = GeometrySpec(
            shape=GaussianEllipsoid(LAMBDA0, LAMBDA0, LAMBDA0), atom_count=1000
        )
        cigar = GeometrySpec(
            shape=GaussianEllipsoid(np.pi, np.pi, 8 * np.pi), atom_count=1000
        )
        assert peak_density(cigar) == pytest.approx(peak_density(sphere), rel=1e-12)

    def test_linearity_in_atom_number(self):
        base = GeometrySpec(shape=GaussianEllipsoid(2.0, 3.0, 4.0), atom_count=500)
        doubled = GeometrySpec(shape=GaussianEllipsoid(2.0, 3.0, 4.0), atom_count=1000)
        assert peak_density(doubled) == pytest.approx(2 * peak_density(base), rel=1e-14)

    def test_inverse_round_trips(self):
        shape = GaussianEllipsoid(3 * np.pi, 3 * np.pi, 30 * np.pi)
        n = atom_count_for_peak_density(shape, 0.01)
        spec = GeometrySpec(shape=shape, atom_count=n)
        assert peak_density(spec) == pytest.approx(0.01, rel=1e-3)

    def test_requires_gaussian(self):
        with pytest.raises(TypeError):
            peak_density(GeometrySpec(shape=CYLINDER, atom_count=10))


class TestSampling:
    def test_cylinder_containment_and_exclusion(self):
        spec = GeometrySpec(shape=CYLINDER, atom_count=701)
        cloud = sample_positions(spec, seed=20240501)
        pos = cloud.positions
        assert np.all(pos[:, 0] ** 2 + pos[:, 1] ** 2 <= CYLINDER.radius**2)
        assert np.all(np.abs(pos[:, 2]) <= CYLINDER.length / 2)
        diff = pos[None, :, :] - pos[:, None, :]
        dist = np.sqrt((diff**2).sum(axis=-1))
        dist[np.diag_indices_from(dist)] = np.inf
        assert dist.min() >= spec.exclusion_radius

    def test_deterministic_given_seed(self):
        spec = GeometrySpec(shape=CYLINDER, atom_count=120)
        a = sample_positions(spec, seed=7)
        b = sample_positions(spec, seed=7)
        assert np.array_equal(a.positions, b.positions)
        assert a.resample_count == b.resample_count

    @given(seed=st.integers(min_value=0, max_value=2**63 - 1))
    @settings(max_examples=25, deadline=None)
    def test_exclusion_holds_for_any_seed(self, seed):
        spec = GeometrySpec(
            shape=UniformCylinder(radius=np.pi, length=2 * np.pi), atom_count=40
        )
        pos = sample_positions(spec, seed).positions
        diff = pos[None, :, :] - pos[:, None, :]
        dist = np.sqrt((diff**2).sum(axis=-1))
        dist[np.diag_indices_from(dist)] = np.inf
        assert dist.min() >= spec.exclusion_radius

    def test_single_atom_never_resamples(self):
        spec = GeometrySpec(shape=CYLINDER, atom_count=1)
        cloud = sample_positions(spec, seed=3)
        assert cloud.n_atoms == 1
        assert cloud.resample_count == 0

    def test_gaussian_law_of_large_numbers(self):
        sigma = LAMBDA0
        spec = GeometrySpec(
            shape=GaussianEllipsoid(sigma, sigma, sigma), atom_count=1000
        )
        pooled = np.concatenate(
            [sample_positions(spec, seed=s).positions for s in range(20)]
        )
        assert np.abs(pooled.mean(axis=0)).max() < 0.2
        assert np.abs(pooled.std(axis=0) - sigma).max() < 0.15

    def test_radial_distribution_uniform_in_r_squared(self):
        # pooled >= 1e4 samples: empirical CDF of x^2+y^2 close to uniform
        spec = GeometrySpec(shape=CYLINDER, atom_count=701)
        r2 = np.concatenate(
            [
                np.sum(sample_positions(spec, seed=s).positions[:, :2] ** 2, axis=1)
                for s in range(15)
            ]
        )
        assert r2.size >= 10_000
        stat = scipy.stats.kstest(r2, "uniform", args=(0, CYLINDER.radius**2)).statistic
        assert stat < 0.02

    def test_packing_guard_rejects_dense_cylinder_spec(self):
        with pytest.raises(ValueError, match="packing too dense"):
            GeometrySpec(
                shape=UniformCylinder(radius=1.0, length=1.0),
                atom_count=500,
                exclusion_radius=0.2,
            )

    def test_unsatisfiable_gaussian_packing_aborts(self):
        spec = GeometrySpec(
            shape=GaussianEllipsoid(0.01, 0.01, 0.01),
            atom_count=80,
            exclusion_radius=0.3,
        )
        with pytest.raises(PackingError, match="packing too dense"):
            sample_positions(spec, seed=1)

    def test_different_seeds_give_different_clouds(self):
        spec = GeometrySpec(shape=CYLINDER, atom_count=50)
        a = sample_positions(spec, seed=1)
        b = sample_positions(spec, seed=2)
        assert not np.array_equal(a.positions, b.positions)
