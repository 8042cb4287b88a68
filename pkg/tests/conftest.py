import numpy as np
import pytest

from coupled_dipoles import GeometrySpec, UniformCylinder, sample_positions


def random_cloud(n_atoms: int, seed: int, min_separation: float = 0.4):
    """A modest random configuration for identity and oracle tests."""
    radius = max(np.pi, (n_atoms / 3.0) ** (1 / 3))
    spec = GeometrySpec(
        shape=UniformCylinder(radius=radius, length=4.0 * radius),
        atom_count=n_atoms,
        exclusion_radius=min_separation,
    )
    return sample_positions(spec, seed)


@pytest.fixture
def small_cloud():
    return random_cloud(30, seed=123)
