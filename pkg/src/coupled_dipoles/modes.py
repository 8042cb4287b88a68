"""Collective-state diagnostics in the orthogonal basis of M_R.

Only the real part of the coupling matrix is diagonalized: its orthogonal
eigenbasis lets every steady state be decomposed into non-overlapping
collective states with eigenenergy eps_j (the state shift).  Per mode the
excitation p_j, the emission capability Pi_j (the phase-matched overlap with
the forward direction) and the axial spatial Fourier amplitude F_j(k_f) are
the quantities that explain which states a probe populates and which states
actually radiate forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupling import CouplingMatrices, SteadyState
from .geometry import AtomCloud

__all__ = [
    "EigensolverError",
    "ModeBasis",
    "ModeObservables",
    "EnergyHistogram",
    "FourierMap",
    "FourierRidge",
    "diagonalize_real_part",
    "mode_excitations",
    "emission_capability",
    "spatial_fourier",
    "max_spatial_frequency",
    "dos_histogram",
]

# A ridge must stand out from the bin mean by this relative contrast before
# a dominant spatial frequency is reported as real order.
DEFAULT_RIDGE_CONTRAST = 0.5


class EigensolverError(RuntimeError):
    """Symmetric eigendecomposition did not converge."""


@dataclass(eq=False)
class ModeBasis:
    """Eigenenergies (ascending) and orthonormal eigenvectors of M_R.

    Column j of `vectors` is the eigenvector of `energies[j]`.  Signs follow
    a fixed convention (first nonzero component positive) so repeated runs
    produce identical bases.
    """

    energies: np.ndarray
    vectors: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.energies.size


def diagonalize_real_part(m: CouplingMatrices) -> ModeBasis:
    """Full eigendecomposition of the real symmetric coupling matrix."""
    try:
        energies, vectors = np.linalg.eigh(m.m_real)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError("eigh failed to converge on M_R") from exc
    # eigh returns ascending eigenvalues; fix the per-column sign.
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        nz = np.flatnonzero(col)
        if nz.size and col[nz[0]] < 0:
            vectors[:, j] = -col
    return ModeBasis(energies=energies, vectors=vectors)


def mode_excitations(basis: ModeBasis, state: SteadyState) -> np.ndarray:
    """Per-mode excitation amplitudes p = R^T b (R is orthogonal)."""
    return basis.vectors.T @ state.amplitudes


def emission_capability(basis: ModeBasis, cloud: AtomCloud) -> tuple[np.ndarray, np.ndarray]:
    """Forward emission capability per mode.

    Returns (Pi, A) with A_j = Sum_i R_j^(i) exp(-i z_i) and Pi_j = |A_j|.
    """
    amplitudes = basis.vectors.T @ np.exp(-1j * cloud.z)
    return np.abs(amplitudes), amplitudes


def spatial_fourier(basis: ModeBasis, cloud: AtomCloud, k_f_grid) -> np.ndarray:
    """Axial Fourier amplitudes F_j(k_f) = Sum_i R_j^(i) exp(-i k_f z_i).

    Positions are irregular, so this is the direct nonuniform sum; the
    result has shape (n_modes, len(k_f_grid)).  The k_f = 1 column equals
    the emission-capability amplitudes.
    """
    k_f_grid = np.asarray(k_f_grid, dtype=float)
    if k_f_grid.size == 0:
        raise ValueError("k_f grid is empty")
    phases = np.exp(-1j * np.outer(cloud.z, k_f_grid))
    return basis.vectors.T @ phases


@dataclass(eq=False)
class ModeObservables:
    """Bundle of per-mode quantities for one configuration."""

    excitations: np.ndarray | None
    capabilities: np.ndarray
    amplitudes: np.ndarray
    fourier: np.ndarray | None
    k_f_grid: np.ndarray | None


@dataclass(eq=False)
class EnergyHistogram:
    """Histogram over collective eigenenergies.

    `density` is normalized so the trapezoid rule over bin centers
    integrates to 1; `counts` keeps the raw pooled counts.  Samples outside
    the binned range are pooled into `underflow` / `overflow`.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray
    underflow: int
    overflow: int
    normalization: str = "area"

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])


def dos_histogram(energies, bin_edges) -> EnergyHistogram:
    """Pool eigenenergies from one or more configurations into a histogram.

    `energies` is a single array or a sequence of per-configuration arrays.
    """
    if isinstance(energies, np.ndarray):
        pooled = energies.ravel()
    else:
        parts = [np.asarray(e, dtype=float).ravel() for e in energies]
        if not parts:
            raise ValueError("need at least one configuration")
        pooled = np.concatenate(parts)
    bin_edges = np.asarray(bin_edges, dtype=float)
    counts, _ = np.histogram(pooled, bins=bin_edges)
    underflow = int(np.sum(pooled < bin_edges[0]))
    overflow = int(np.sum(pooled >= bin_edges[-1]))
    centers = 0.5 * (bin_edges[1:] + bin_edges[:-1])
    area = np.trapezoid(counts.astype(float), centers)
    density = counts / area if area > 0 else counts.astype(float)
    return EnergyHistogram(
        bin_edges=bin_edges, counts=counts, density=density,
        underflow=underflow, overflow=overflow,
    )


@dataclass(eq=False)
class FourierMap:
    """Ensemble-averaged |F_j(k_f)| binned by eigenenergy.

    `mean_abs[b, k]` is the average of |F_j(k_f_grid[k])| over all modes j
    (across configurations) whose energy fell in bin b; `counts[b]` is the
    number of contributing modes.
    """

    bin_edges: np.ndarray
    k_f_grid: np.ndarray
    mean_abs: np.ndarray
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])


@dataclass(eq=False)
class FourierRidge:
    """Dominant spatial frequency per energy bin.

    `k_f_max` is NaN for empty bins.  `contrast` measures how sharply the
    maximum stands out of the bin, (max - mean)/max; bins below the contrast
    threshold carry `has_order = False` (no clear spatial order).
    """

    centers: np.ndarray
    k_f_max: np.ndarray
    contrast: np.ndarray
    has_order: np.ndarray
    contrast_threshold: float


def max_spatial_frequency(fourier_map: FourierMap,
                          contrast_threshold: float = DEFAULT_RIDGE_CONTRAST) -> FourierRidge:
    """Extract k_f that maximizes the averaged |F| in every populated bin.

    Ties break toward the smaller k_f.  Empty bins are marked missing (NaN),
    not zero.
    """
    n_bins = fourier_map.mean_abs.shape[0]
    k_f_max = np.full(n_bins, np.nan)
    contrast = np.full(n_bins, np.nan)
    has_order = np.zeros(n_bins, dtype=bool)
    for b in range(n_bins):
        if fourier_map.counts[b] == 0:
            continue
        row = fourier_map.mean_abs[b]
        peak = row.max()
        if peak <= 0:
            continue
        k_f_max[b] = fourier_map.k_f_grid[np.argmax(row)]
        contrast[b] = (peak - row.mean()) / peak
        has_order[b] = contrast[b] >= contrast_threshold
    return FourierRidge(
        centers=fourier_map.centers, k_f_max=k_f_max, contrast=contrast,
        has_order=has_order, contrast_threshold=contrast_threshold,
    )
