"""Random atomic position configurations inside simple cloud geometries.

All lengths are expressed in units of 1/k (the driving-light wavenumber is
k = 1 internally, so one transition wavelength is 2*pi).  Sampling is fully
deterministic given a (spec, seed) pair: the generator is PCG64 seeded
directly with the 64-bit seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LAMBDA0",
    "DEFAULT_EXCLUSION_RADIUS",
    "UniformCylinder",
    "GaussianEllipsoid",
    "GeometrySpec",
    "AtomCloud",
    "PackingError",
    "sample_positions",
    "atom_count_from_density",
    "atom_count_for_peak_density",
    "peak_density",
]

LAMBDA0 = 2.0 * np.pi

# Keeps the (kr)^-3 near-field pair shifts bounded; configurable per spec.
DEFAULT_EXCLUSION_RADIUS = 0.05 * LAMBDA0

RNG_ALGORITHM = "pcg64"

# Abort sampling after this many rejections per atom (on average).
_MAX_REJECTIONS_PER_ATOM = 1000


class PackingError(RuntimeError):
    """Raised when exclusion-radius resampling fails to terminate."""


@dataclass(frozen=True)
class UniformCylinder:
    """Uniform-density cylinder of radius `radius` and length `length`.

    The cylinder axis is the +z axis (the drive propagation direction) and
    the cloud is centered on the origin.
    """

    radius: float
    length: float

    def __post_init__(self):
        if not (self.radius > 0 and self.length > 0):
            raise ValueError("cylinder radius and length must be positive")

    @property
    def volume(self) -> float:
        return np.pi * self.radius**2 * self.length


@dataclass(frozen=True)
class GaussianEllipsoid:
    """Gaussian density profile with per-axis standard deviations.

    The density is proportional to exp(-(x^2/sx^2 + y^2/sy^2 + z^2/sz^2)/2);
    positions are unbounded (no truncation is applied).
    """

    sigma_x: float
    sigma_y: float
    sigma_z: float

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0 and self.sigma_z > 0):
            raise ValueError("Gaussian sigmas must be positive")

    @property
    def sigmas(self) -> tuple[float, float, float]:
        return (self.sigma_x, self.sigma_y, self.sigma_z)


Shape = UniformCylinder | GaussianEllipsoid


@dataclass(frozen=True)
class GeometrySpec:
    """A cloud shape together with the atom number and exclusion radius."""

    shape: Shape
    atom_count: int
    exclusion_radius: float = DEFAULT_EXCLUSION_RADIUS

    def __post_init__(self):
        if self.atom_count < 1:
            raise ValueError(f"atom_count must be >= 1, got {self.atom_count}")
        if not self.exclusion_radius > 0:
            raise ValueError("exclusion_radius must be positive")
        if isinstance(self.shape, UniformCylinder):
            # Termination guard: exclusion spheres must fill < 10% of the volume.
            excluded = self.atom_count * (4.0 / 3.0) * np.pi * self.exclusion_radius**3
            if excluded >= 0.1 * self.shape.volume:
                raise ValueError(
                    "packing too dense: N*(4/3)*pi*r_excl^3 = "
                    f"{excluded:.4g} exceeds 10% of the cylinder volume "
                    f"{self.shape.volume:.4g}"
                )


@dataclass(frozen=True, eq=False)
class AtomCloud:
    """One sampled configuration of fixed atomic positions.

    `positions` is an (N, 3) float array in units of 1/k.  `resample_count`
    records how many candidate positions were rejected by the exclusion
    radius while building the cloud.
    """

    positions: np.ndarray
    seed: int
    spec: GeometrySpec
    resample_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        if self.positions.shape != (self.spec.atom_count, 3):
            raise ValueError(
                f"positions shape {self.positions.shape} does not match "
                f"atom_count {self.spec.atom_count}"
            )

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    @property
    def z(self) -> np.ndarray:
        return self.positions[:, 2]


def _draw_position(shape: Shape, rng: np.random.Generator) -> np.ndarray:
    if isinstance(shape, UniformCylinder):
        u_r, u_phi, u_z = rng.random(3)
        r = shape.radius * np.sqrt(u_r)
        phi = 2.0 * np.pi * u_phi
        return np.array(
            [r * np.cos(phi), r * np.sin(phi), (u_z - 0.5) * shape.length]
        )
    return rng.standard_normal(3) * np.asarray(shape.sigmas)


def sample_positions(spec: GeometrySpec, seed: int) -> AtomCloud:
    """Draw one atomic configuration for `spec`, reproducibly from `seed`.

    Atoms are placed one at a time; a candidate closer than the exclusion
    radius to any already-accepted atom is redrawn (only the offending atom
    is resampled, which preserves the target density at low packing
    fractions).

    Raises
    ------
    PackingError
        If the total number of rejections exceeds 1000 * atom_count.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    n = spec.atom_count
    r2_min = spec.exclusion_radius**2
    positions = np.empty((n, 3))
    rejections = 0
    max_rejections = _MAX_REJECTIONS_PER_ATOM * n
    accepted = 0
    while accepted < n:
        candidate = _draw_position(spec.shape, rng)
        if accepted:
            d2 = np.sum((positions[:accepted] - candidate) ** 2, axis=1)
            if d2.min() < r2_min:
                rejections += 1
                if rejections > max_rejections:
                    raise PackingError(
                        f"packing too dense: {rejections} rejections while "
                        f"placing {accepted}/{n} atoms "
                        f"(r_excl={spec.exclusion_radius:.4g})"
                    )
                continue
        positions[accepted] = candidate
        accepted += 1
    return AtomCloud(positions=positions, seed=seed, spec=spec, resample_count=rejections)


def atom_count_from_density(shape: UniformCylinder, rho_over_k3: float) -> int:
    """Atom number for a uniform cylinder at number density rho/k^3.

    Returns round(rho * pi * R^2 * L); a result of 0 must be rejected by the
    caller (GeometrySpec requires atom_count >= 1).
    """
    if not rho_over_k3 > 0:
        raise ValueError("rho_over_k3 must be positive")
    return int(round(rho_over_k3 * shape.volume))


def peak_density(spec: GeometrySpec) -> float:
    """Peak number density rho_0/k^3 of a Gaussian cloud.

    rho_0 = N / ((2*pi)^(3/2) * sigma_x * sigma_y * sigma_z).
    """
    if not isinstance(spec.shape, GaussianEllipsoid):
        raise TypeError("peak_density is defined for GaussianEllipsoid shapes")
    sx, sy, sz = spec.shape.sigmas
    return spec.atom_count / ((2.0 * np.pi) ** 1.5 * sx * sy * sz)


def atom_count_for_peak_density(shape: GaussianEllipsoid, rho0_over_k3: float) -> int:
    """Inverse of `peak_density`: atom number giving the requested peak density."""
    if not rho0_over_k3 > 0:
        raise ValueError("rho0_over_k3 must be positive")
    sx, sy, sz = shape.sigmas
    return int(round(rho0_over_k3 * (2.0 * np.pi) ** 1.5 * sx * sy * sz))
