"""Spectral-peak extraction and parameter sweeps over ensemble runs.

The collective shift is read off the ensemble-averaged spectrum in two
flavors: the position of the strongly red-shifted left peak and the position
of the small central tip.  Both are reported by `find_peaks` and tracked by
the optical-depth scaling sweep.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.signal

from .ensemble import EnsembleResult, RunConfig, derive_seed, run_ensemble
from .geometry import GaussianEllipsoid, GeometrySpec, atom_count_for_peak_density, peak_density
from .scattering import SpectrumCurve

__all__ = [
    "Peak",
    "PeakReport",
    "PeakFinderSettings",
    "RoughCurveError",
    "ScalingRow",
    "ScalingTable",
    "optical_depth",
    "find_peaks",
    "scaling_sweep",
    "angular_sweep",
]

logger = logging.getLogger(__name__)

SWEEP_MODES = ("fixed_density_vary_size", "fixed_size_vary_density")


def optical_depth(n_atoms: int, sigma_x: float, sigma_y: float) -> float:
    """Resonant optical depth 3N/(2 sigma_x sigma_y) (k = 1)."""
    if n_atoms <= 0 or sigma_x <= 0 or sigma_y <= 0:
        raise ValueError("optical depth needs positive N and transverse sigmas")
    return 3.0 * n_atoms / (2.0 * sigma_x * sigma_y)


class RoughCurveError(ValueError):
    """The curve looks like a single-configuration spectrum, not an average."""


@dataclass(frozen=True)
class Peak:
    position: float
    height: float
    prominence: float


@dataclass(frozen=True)
class PeakFinderSettings:
    """Knobs for spectral peak extraction.

    `prominence_fraction` is relative to the curve's global maximum; the
    central peak is the candidate nearest Delta = 0 within
    `central_window`, left/right are the most prominent candidates beyond
    it.  Positions are refined by a quadratic fit through `refine_points`
    grid points around each maximum.
    """

    prominence_fraction: float = 0.05
    central_window: float = 2.0
    refine_points: int = 5
    roughness_limit: float = 10.0


@dataclass(frozen=True)
class PeakReport:
    """Classified spectral peaks; absent classes are None."""

    left_peak: Peak | None
    central_peak: Peak | None
    right_peak: Peak | None

    @property
    def collective_shift_left(self) -> float | None:
        return self.left_peak.position if self.left_peak else None

    @property
    def collective_shift_central(self) -> float | None:
        return self.central_peak.position if self.central_peak else None


def _refine_position(x: np.ndarray, y: np.ndarray, idx: int, n_points: int) -> float:
    """Vertex of a quadratic fitted through the n_points nearest grid points."""
    half = n_points // 2
    lo = max(0, idx - half)
    hi = min(x.size, lo + n_points)
    lo = max(0, hi - n_points)
    coeffs = np.polyfit(x[lo:hi], y[lo:hi], 2)
    if coeffs[0] >= 0:  # degenerate fit, keep the grid position
        return float(x[idx])
    vertex = -coeffs[1] / (2.0 * coeffs[0])
    # the refined position must stay inside the fit window
    return float(np.clip(vertex, x[lo], x[hi - 1]))


def find_peaks(curve: SpectrumCurve,
               settings: PeakFinderSettings = PeakFinderSettings()) -> PeakReport:
    """Locate and classify the spectral peaks of an ensemble-averaged curve.

    Raises RoughCurveError when the total variation of the curve exceeds
    `roughness_limit` times its maximum, which distinguishes drastically
    fluctuating single-configuration spectra from converged averages.
    """
    x = np.asarray(curve.detunings, dtype=float)
    y = np.asarray(curve.i_total, dtype=float)
    peak = y.max()
    if peak <= 0:
        raise ValueError("curve has no positive intensity")
    roughness = np.abs(np.diff(y)).sum() / peak
    if roughness >= settings.roughness_limit:
        raise RoughCurveError(
            f"total variation / max = {roughness:.2f} exceeds "
            f"{settings.roughness_limit}; ensemble-average the spectrum first"
        )
    indices, props = scipy.signal.find_peaks(
        y, prominence=settings.prominence_fraction * peak
    )
    candidates = [
        Peak(
            position=_refine_position(x, y, int(i), settings.refine_points),
            height=float(y[i]),
            prominence=float(p),
        )
        for i, p in zip(indices, props["prominences"])
    ]
    central = [c for c in candidates if abs(c.position) <= settings.central_window]
    left = [c for c in candidates if c.position < -settings.central_window]
    right = [c for c in candidates if c.position > settings.central_window]
    return PeakReport(
        left_peak=max(left, key=lambda c: c.prominence) if left else None,
        central_peak=min(central, key=lambda c: abs(c.position)) if central else None,
        right_peak=max(right, key=lambda c: c.prominence) if right else None,
    )


@dataclass(frozen=True)
class ScalingRow:
    od: float
    sweep_mode: str
    shift_left: float
    shift_central: float
    n_atoms: int
    sigma_x: float
    sigma_y: float
    sigma_z: float
    peak_density: float


@dataclass(frozen=True)
class ScalingTable:
    sweep_mode: str
    rows: tuple[ScalingRow, ...]
    failed_points: tuple[tuple[int, str], ...] = ()


def _scaling_geometry(base: RunConfig, mode: str, point, index: int) -> GeometrySpec:
    shape = base.geometry.shape
    if not isinstance(shape, GaussianEllipsoid):
        raise ValueError("scaling sweeps need a Gaussian base geometry")
    if mode == "fixed_density_vary_size":
        ratio_y = shape.sigma_y / shape.sigma_x
        ratio_z = shape.sigma_z / shape.sigma_x
        if abs(ratio_y - 1.0) > 1e-9 or abs(ratio_z - 10.0) > 1e-9:
            raise ValueError(
                "fixed-density sweep requires the 1:1:10 cigar aspect ratio, got "
                f"1:{ratio_y:.3g}:{ratio_z:.3g}"
            )
        rho0 = peak_density(base.geometry)
        new_shape = GaussianEllipsoid(sigma_x=float(point), sigma_y=float(point),
                                      sigma_z=10.0 * float(point))
        n = atom_count_for_peak_density(new_shape, rho0)
        return replace(base.geometry, shape=new_shape, atom_count=n)
    if mode == "fixed_size_vary_density":
        return replace(base.geometry, atom_count=int(point))
    raise ValueError(f"unknown sweep mode {mode!r}; expected one of {SWEEP_MODES}")


def scaling_sweep(base: RunConfig, mode: str, points, n_workers: int = 1,
                  progress: bool = False,
                  settings: PeakFinderSettings = PeakFinderSettings()) -> ScalingTable:
    """One full ensemble run per sweep point; reports both collective shifts.

    For `fixed_density_vary_size`, `points` lists sigma_x values; the cloud
    keeps the base 1:1:10 aspect ratio and the base peak density, and the
    atom number follows.  For `fixed_size_vary_density`, `points` lists atom
    numbers at the base sigmas.  Each point runs with a master seed derived
    from the base seed and the point index; a point whose run fails is
    dropped from the table (and recorded), without aborting the sweep.
    """
    if mode not in SWEEP_MODES:
        raise ValueError(f"unknown sweep mode {mode!r}; expected one of {SWEEP_MODES}")
    rows = []
    failures = []
    for i, point in enumerate(points):
        geometry = _scaling_geometry(base, mode, point, i)
        config = replace(base, geometry=geometry,
                         master_seed=derive_seed(base.master_seed, i))
        try:
            result = run_ensemble(config, n_workers=n_workers, progress=progress)
            report = find_peaks(result.spectrum, settings)
        except Exception as exc:
            logger.warning("scaling point %d (%s) failed: %s", i, point, exc)
            failures.append((i, f"{type(exc).__name__}: {exc}"))
            continue
        shape = geometry.shape
        rows.append(ScalingRow(
            od=optical_depth(geometry.atom_count, shape.sigma_x, shape.sigma_y),
            sweep_mode=mode,
            shift_left=(report.collective_shift_left
                        if report.collective_shift_left is not None else np.nan),
            shift_central=(report.collective_shift_central
                           if report.collective_shift_central is not None else np.nan),
            n_atoms=geometry.atom_count,
            sigma_x=shape.sigma_x, sigma_y=shape.sigma_y, sigma_z=shape.sigma_z,
            peak_density=peak_density(geometry),
        ))
    return ScalingTable(sweep_mode=mode, rows=tuple(rows),
                        failed_points=tuple(failures))


def angular_sweep(base: RunConfig, angles, n_workers: int = 1,
                  progress: bool = False) -> EnsembleResult:
    """Ensemble run that detects at every angle in `angles` as well as forward.

    Steady states are solved once per configuration and reused for all
    detection angles.
    """
    angles = tuple(float(a) for a in angles)
    config = replace(base, angles=angles)
    return run_ensemble(config, n_workers=n_workers, progress=progress)
