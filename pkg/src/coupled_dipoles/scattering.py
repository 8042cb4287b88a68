"""Observable intensities from steady-state amplitudes.

Forward detection is along +z.  The total forward intensity splits into an
incoherent part (the summed single-atom excitations) and a coherent
interference part; the latter may legitimately be negative for disordered
phases and is reported as-is.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .coupling import SteadyState
from .geometry import AtomCloud

__all__ = [
    "SpectrumCurve",
    "forward_intensity",
    "intensity_at_angle",
    "total_excitation",
]

_AZIMUTH_AVERAGE_POINTS = 16


def total_excitation(state: SteadyState) -> float:
    """Sum of single-atom excitations, Sum_i |b_i|^2."""
    b = state.amplitudes
    return float(np.real(np.vdot(b, b)))


def forward_intensity(state: SteadyState, cloud: AtomCloud) -> tuple[float, float, float]:
    """Forward-scattered intensity split as (total, coherent, incoherent).

    total = |Sum_i b_i exp(-i z_i)|^2, incoherent = Sum_i |b_i|^2, and
    coherent is their difference (the pair interference term).
    """
    amplitude = np.exp(-1j * cloud.z) @ state.amplitudes
    total = float(np.abs(amplitude) ** 2)
    incoherent = total_excitation(state)
    return total, total - incoherent, incoherent


def intensity_at_angle(state: SteadyState, cloud: AtomCloud, theta: float,
                       azimuth_average: bool = False) -> float:
    """Scattered intensity detected at polar angle `theta` from +z.

    The detector sits in the y-z plane (perpendicular to the x dipole
    orientation), direction n = (0, sin t, cos t); theta = 0 reproduces the
    forward total exactly.  With `azimuth_average` the intensity is instead
    averaged over 16 equally spaced azimuths at the same polar angle.
    """
    if not 0.0 <= theta < np.pi / 2:
        raise ValueError("theta must lie in [0, pi/2)")
    if not azimuth_average:
        direction = np.array([0.0, np.sin(theta), np.cos(theta)])
        amplitude = np.exp(-1j * (cloud.positions @ direction)) @ state.amplitudes
        return float(np.abs(amplitude) ** 2)
    phis = 2.0 * np.pi * np.arange(_AZIMUTH_AVERAGE_POINTS) / _AZIMUTH_AVERAGE_POINTS
    directions = np.stack(
        [np.sin(theta) * np.cos(phis), np.sin(theta) * np.sin(phis),
         np.full_like(phis, np.cos(theta))], axis=1,
    )
    amplitudes = np.exp(-1j * (directions @ cloud.positions.T)) @ state.amplitudes
    return float(np.mean(np.abs(amplitudes) ** 2))


@dataclass(frozen=True, eq=False)
class SpectrumCurve:
    """Intensity and excitation spectra on one detuning grid.

    `i_total = i_coherent + i_incoherent` holds pointwise by construction.
    `detection_angle` is the polar detection angle (0 for forward); the
    azimuth convention is recorded as a tag.
    """

    detunings: np.ndarray
    i_total: np.ndarray
    i_coherent: np.ndarray
    i_incoherent: np.ndarray
    excitation: np.ndarray
    normalized: bool = False
    detection_angle: float = 0.0
    azimuth: str = "y-z plane"

    def __post_init__(self):
        n = self.detunings.size
        for name in ("i_total", "i_coherent", "i_incoherent", "excitation"):
            if getattr(self, name).size != n:
                raise ValueError(f"{name} length does not match the detuning grid")

    def value_at_zero(self) -> float:
        """i_total at Delta = 0 (the grid must contain 0)."""
        idx = np.flatnonzero(self.detunings == 0.0)
        if idx.size == 0:
            raise ValueError("detuning grid does not contain Delta = 0")
        return float(self.i_total[idx[0]])

    def normalized_by_center(self, reference: float | None = None) -> "SpectrumCurve":
        """Divide by the Delta = 0 value (or an explicit reference intensity).

        All three intensity series share one denominator so the
        total = coherent + incoherent identity survives normalization; the
        excitation series is scaled by its own Delta = 0 value.
        """
        ref = self.value_at_zero() if reference is None else float(reference)
        idx = np.flatnonzero(self.detunings == 0.0)
        exc_ref = float(self.excitation[idx[0]]) if idx.size else 1.0
        return replace(
            self,
            i_total=self.i_total / ref,
            i_coherent=self.i_coherent / ref,
            i_incoherent=self.i_incoherent / ref,
            excitation=self.excitation / exc_ref,
            normalized=True,
        )
