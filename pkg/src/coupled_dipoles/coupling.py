"""Dipole-dipole coupling matrices and the weak-drive steady state.

Conventions: rates in units of gamma_0 (= 1), lengths in 1/k (= 1).  The
drive propagates along +z and the dipoles are polarized along x.  Each atom
pair (i, j) contributes the vector-kernel coupling

    V_ij = (3/4) * [ -(1 - cos^2 t) e^(i r)/r
                     + (1 - 3 cos^2 t) * (-i e^(i r)/r^2 + e^(i r)/r^3) ]

with r the pair separation (times k) and t the angle between the separation
vector and the x axis.  The driven single-excitation amplitudes b satisfy

    (-Delta*I + M_R + i*M_I) b = -Omega * D,      D_i = exp(i z_i),

where M_R / M_I collect the real / imaginary parts of V with diagonals 0 and
-1/2 respectively.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import AtomCloud

__all__ = [
    "DegeneratePositionsError",
    "SolverError",
    "CouplingMatrices",
    "DriveField",
    "SteadyState",
    "SweepResult",
    "pairwise_coupling",
    "build_matrices",
    "drive_vector",
    "solve_steady_state",
    "spectrum_sweep",
]

logger = logging.getLogger(__name__)

# Minimum pair separation (in 1/k); closer pairs mean the sampler failed.
_MIN_SEPARATION = 1e-12

# Spectral backend is used for sweeps at least this long (one O(N^3)
# eigendecomposition amortized over the grid).
_SPECTRAL_MIN_GRID = 50

_SPECTRAL_VALIDATION_POINTS = 5
_SPECTRAL_VALIDATION_RTOL = 1e-6
_SPECTRAL_MAX_CONDITION = 1e8

_DIRECT_RESIDUAL_LIMIT = 1e-9

# Warn-only threshold: the linear model is exact in Omega, but physically the
# single-excitation description needs a weak drive.
_WEAK_DRIVE_LIMIT = 0.1


class DegeneratePositionsError(ValueError):
    """Two atoms closer than the degeneracy guard reached the coupling kernel."""


class SolverError(RuntimeError):
    """Direct steady-state solve failed or produced an out-of-bound residual."""


def _kernel(r: np.ndarray, cos_theta: np.ndarray) -> np.ndarray:
    """Vector dipole kernel evaluated elementwise on (k*r, cos theta)."""
    phase = np.exp(1j * r)
    transverse = -(1.0 - cos_theta**2) * phase / r
    near = (1.0 - 3.0 * cos_theta**2) * (-1j * phase / r**2 + phase / r**3)
    return 0.75 * (transverse + near)


def pairwise_coupling(r_i, r_j) -> complex:
    """Coupling V_ij between two atoms at positions `r_i` and `r_j`.

    Symmetric in its arguments: the kernel depends only on the separation
    and on cos^2 of the angle to the x axis.
    """
    offset = np.asarray(r_j, dtype=float) - np.asarray(r_i, dtype=float)
    r = float(np.sqrt(np.dot(offset, offset)))
    if r < _MIN_SEPARATION:
        raise DegeneratePositionsError(
            f"pair separation k*r = {r:.3e} below {_MIN_SEPARATION:.0e}"
        )
    return complex(_kernel(np.float64(r), np.float64(offset[0] / r)))


@dataclass
class CouplingMatrices:
    """Real and imaginary parts of the N x N coupling matrix.

    `m_real` holds Re V_ij off-diagonal with an exactly zero diagonal;
    `m_imag` holds Im V_ij off-diagonal with every diagonal entry -1/2.
    Both are built symmetric entry-for-entry (each unordered pair is
    evaluated once and mirrored).
    """

    m_real: np.ndarray
    m_imag: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.m_real.shape[0]

    def complex_matrix(self) -> np.ndarray:
        """M_R + i M_I, the detuning-independent part of the system matrix."""
        return self.m_real + 1j * self.m_imag

    def system_matrix(self, detuning: float) -> np.ndarray:
        """-Delta*I + M_R + i*M_I."""
        m = self.complex_matrix()
        idx = np.arange(self.n_atoms)
        m[idx, idx] -= detuning
        return m


def build_matrices(cloud: AtomCloud) -> CouplingMatrices:
    """Assemble the coupling matrices for one atomic configuration."""
    pos = cloud.positions
    n = cloud.n_atoms
    m_real = np.zeros((n, n))
    m_imag = np.full((n, n), 0.0)
    if n > 1:
        iu, ju = np.triu_indices(n, k=1)
        offsets = pos[ju] - pos[iu]
        r = np.sqrt(np.einsum("ij,ij->i", offsets, offsets))
        if r.min() < _MIN_SEPARATION:
            raise DegeneratePositionsError(
                f"minimum pair separation k*r = {r.min():.3e}"
            )
        values = _kernel(r, offsets[:, 0] / r)
        m_real[iu, ju] = values.real
        m_real[ju, iu] = values.real
        m_imag[iu, ju] = values.imag
        m_imag[ju, iu] = values.imag
    np.fill_diagonal(m_imag, -0.5)
    return CouplingMatrices(m_real=m_real, m_imag=m_imag)


def drive_vector(cloud: AtomCloud) -> np.ndarray:
    """Plane-wave drive phases D_i = exp(i z_i) for +z propagation."""
    return np.exp(1j * cloud.z)


@dataclass(frozen=True, eq=False)
class DriveField:
    """Drive parameters plus the per-atom plane-wave phases.

    Propagation is fixed to +z and the polarization to x.  A Rabi frequency
    at or above 0.1 gamma_0 triggers a warning: the linear model stays exact,
    but the weak-drive reading of the amplitudes does not.
    """

    rabi: float
    detuning: float
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.rabi > 0:
            raise ValueError("rabi must be positive")
        if self.rabi >= _WEAK_DRIVE_LIMIT:
            warnings.warn(
                f"Rabi frequency {self.rabi} gamma_0 is outside the weak-drive "
                "regime (>= 0.1 gamma_0)",
                UserWarning,
                stacklevel=2,
            )

    @classmethod
    def plane_wave(cls, cloud: AtomCloud, rabi: float, detuning: float) -> "DriveField":
        return cls(rabi=rabi, detuning=detuning, amplitudes=drive_vector(cloud))


@dataclass
class SteadyState:
    """Steady-state excitation amplitudes at one probe detuning."""

    amplitudes: np.ndarray
    detuning: float
    solver_tag: str  # "direct" or "spectral"

    @property
    def n_atoms(self) -> int:
        return self.amplitudes.shape[0]


def _residual(m: CouplingMatrices, b: np.ndarray, drive: np.ndarray,
              detuning: float, rabi: float) -> float:
    lhs = m.system_matrix(detuning) @ b + rabi * drive
    return float(np.linalg.norm(lhs) / (rabi * np.sqrt(b.size)))


def solve_steady_state(m: CouplingMatrices, drive: np.ndarray,
                       detuning: float, rabi: float) -> SteadyState:
    """Solve (-Delta*I + M_R + i*M_I) b = -Omega D by direct factorization."""
    system = m.system_matrix(detuning)
    try:
        b = np.linalg.solve(system, -rabi * np.asarray(drive, dtype=complex))
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(system, 1)
        raise SolverError(
            f"singular system at detuning {detuning} (1-norm condition {cond:.3e})"
        ) from exc
    res = _residual(m, b, drive, detuning, rabi)
    if res >= _DIRECT_RESIDUAL_LIMIT:
        raise SolverError(
            f"direct solve residual {res:.3e} exceeds {_DIRECT_RESIDUAL_LIMIT:.0e} "
            f"at detuning {detuning}"
        )
    return SteadyState(amplitudes=b, detuning=detuning, solver_tag="direct")


@dataclass
class SweepResult:
    """Sequence of steady states over a detuning grid.

    Behaves as a list of SteadyState; `backend_used` records whether the
    spectral backend served the sweep or the direct fallback did.
    """

    states: list[SteadyState]
    backend_used: str

    def __iter__(self):
        return iter(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    def amplitude_matrix(self) -> np.ndarray:
        """Amplitudes stacked as an (N, n_detunings) array."""
        return np.stack([s.amplitudes for s in self.states], axis=1)


def _direct_sweep(m, drive, rabi, grid) -> SweepResult:
    states = [solve_steady_state(m, drive, d, rabi) for d in grid]
    return SweepResult(states=states, backend_used="direct")


def _spectral_sweep(m, drive, rabi, grid) -> SweepResult | None:
    """One eigendecomposition of M_R + i M_I amortized over the whole grid.

    Returns None when the eigenbasis is ill-conditioned or disagrees with
    direct solves beyond tolerance; the caller then falls back.
    """
    m0 = m.complex_matrix()
    try:
        lam, s = np.linalg.eig(m0)
    except np.linalg.LinAlgError:
        logger.warning("spectral backend: eigendecomposition failed")
        return None
    s_inv = np.linalg.inv(s)
    cond = np.linalg.norm(s, 1) * np.linalg.norm(s_inv, 1)
    if cond > _SPECTRAL_MAX_CONDITION:
        logger.warning(
            "spectral backend: eigenvector condition %.3e above %.0e, "
            "falling back to direct solves", cond, _SPECTRAL_MAX_CONDITION,
        )
        return None
    coeffs = s_inv @ np.asarray(drive, dtype=complex)
    grid = np.asarray(grid, dtype=float)
    amplitudes = -rabi * (s @ (coeffs[:, None] / (lam[:, None] - grid[None, :])))

    check_idx = np.unique(
        np.round(np.linspace(0, grid.size - 1, min(_SPECTRAL_VALIDATION_POINTS, grid.size)))
        .astype(int)
    )
    for i in check_idx:
        ref = solve_steady_state(m, drive, float(grid[i]), rabi).amplitudes
        err = np.linalg.norm(amplitudes[:, i] - ref) / np.linalg.norm(ref)
        if err > _SPECTRAL_VALIDATION_RTOL:
            logger.warning(
                "spectral backend: mismatch %.3e vs direct at detuning %.3f, "
                "falling back", err, grid[i],
            )
            return None
    states = [
        SteadyState(amplitudes=amplitudes[:, i], detuning=float(grid[i]),
                    solver_tag="spectral")
        for i in range(grid.size)
    ]
    return SweepResult(states=states, backend_used="spectral")


def spectrum_sweep(m: CouplingMatrices, drive: np.ndarray, rabi: float,
                   grid, backend: str = "auto") -> SweepResult:
    """Steady states for every detuning on a strictly increasing grid.

    `backend` is one of "auto", "direct", "spectral".  "auto" picks the
    spectral route for grids of 50 points or more.  The spectral backend is
    validated against direct solves at 5 sampled detunings and silently
    (but logged) falls back to the direct route on failure.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("detuning grid is empty")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("detuning grid must be strictly increasing")
    if backend not in ("auto", "direct", "spectral"):
        raise ValueError(f"unknown backend {backend!r}")

    if backend == "direct":
        return _direct_sweep(m, drive, rabi, grid)
    if backend == "auto" and grid.size < _SPECTRAL_MIN_GRID:
        return _direct_sweep(m, drive, rabi, grid)
    result = _spectral_sweep(m, drive, rabi, grid)
    if result is None:
        return _direct_sweep(m, drive, rabi, grid)
    return result
