"""Numerical invariant suite on small ensembles.

Runs a handful of configurations at modest atom number and checks every
exact identity the pipeline relies on: matrix symmetry and tracelessness,
eigenbasis orthonormality, solver residuals, Parseval and reconstruction
in the collective basis, the intensity split, and spectral-vs-direct
backend agreement.  Used by the `validate` command and by the fast
acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .coupling import build_matrices, drive_vector, solve_steady_state, spectrum_sweep
from .ensemble import derive_seed
from .geometry import GeometrySpec, UniformCylinder, sample_positions
from .modes import diagonalize_real_part, emission_capability, mode_excitations
from .scattering import forward_intensity, total_excitation

__all__ = ["CheckResult", "run_invariant_suite"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    limit: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: worst {self.worst:.3e} (limit {self.limit:.0e})"


def run_invariant_suite(n_atoms: int = 50, n_configs: int = 20,
                        master_seed: int = 2024, rabi: float = 1e-3) -> list[CheckResult]:
    """Check every per-configuration invariant over a small ensemble."""
    radius = np.pi
    length = n_atoms / (0.3 * np.pi * radius**2)
    geometry = GeometrySpec(
        shape=UniformCylinder(radius=radius, length=length), atom_count=n_atoms,
    )
    grid = np.linspace(-20.0, 20.0, 81)
    check_detunings = (-10.0, -5.0, 0.0, 5.0, 10.0)

    worst = {
        "trace(M_R) = 0": 0.0,
        "matrix symmetry": 0.0,
        "eigenbasis orthonormality": 0.0,
        "eigen residual": 0.0,
        "solver residual": 0.0,
        "Parseval": 0.0,
        "intensity split": 0.0,
        "reconstruction": 0.0,
        "spectral vs direct": 0.0,
    }
    with threadpool_limits(limits=1):
        for index in range(n_configs):
            seed = derive_seed(master_seed, index)
            cloud = sample_positions(geometry, seed)
            mats = build_matrices(cloud)
            worst["matrix symmetry"] = max(
                worst["matrix symmetry"],
                np.abs(mats.m_real - mats.m_real.T).max(),
                np.abs(mats.m_imag - mats.m_imag.T).max(),
            )
            scale = np.abs(mats.m_real).max()
            worst["trace(M_R) = 0"] = max(
                worst["trace(M_R) = 0"], abs(np.trace(mats.m_real)) / max(scale, 1e-300)
            )
            basis = diagonalize_real_part(mats)
            gram = np.abs(basis.vectors.T @ basis.vectors - np.eye(n_atoms)).max()
            worst["eigenbasis orthonormality"] = max(
                worst["eigenbasis orthonormality"], gram
            )
            eig_scale = max(np.abs(basis.energies).max(), 1e-300)
            worst["eigen residual"] = max(
                worst["eigen residual"],
                np.abs(mats.m_real @ basis.vectors
                       - basis.vectors * basis.energies[None, :]).max() / eig_scale,
            )
            drive = drive_vector(cloud)
            capabilities, amplitudes = emission_capability(basis, cloud)
            forward_phase = np.exp(-1j * cloud.z)
            for delta in check_detunings:
                state = solve_steady_state(mats, drive, delta, rabi)
                residual = np.linalg.norm(
                    mats.system_matrix(delta) @ state.amplitudes + rabi * drive
                ) / (rabi * np.sqrt(n_atoms))
                worst["solver residual"] = max(worst["solver residual"], residual)
                p = mode_excitations(basis, state)
                exc = total_excitation(state)
                worst["Parseval"] = max(
                    worst["Parseval"], abs(np.sum(np.abs(p) ** 2) - exc) / exc
                )
                total, coherent, incoherent = forward_intensity(state, cloud)
                worst["intensity split"] = max(
                    worst["intensity split"],
                    abs(total - coherent - incoherent) / max(abs(total), 1e-300),
                )
                direct_amp = forward_phase @ state.amplitudes
                worst["reconstruction"] = max(
                    worst["reconstruction"],
                    abs(p @ amplitudes - direct_amp) / abs(direct_amp),
                )
            spectral = spectrum_sweep(mats, drive, rabi, grid, backend="spectral")
            if spectral.backend_used == "spectral":
                for i in np.linspace(0, grid.size - 1, 5).astype(int):
                    ref = solve_steady_state(mats, drive, float(grid[i]), rabi)
                    err = (np.linalg.norm(spectral[i].amplitudes - ref.amplitudes)
                           / np.linalg.norm(ref.amplitudes))
                    worst["spectral vs direct"] = max(worst["spectral vs direct"], err)

    limits = {
        "trace(M_R) = 0": 1e-15,
        "matrix symmetry": 1e-30,
        "eigenbasis orthonormality": 1e-10,
        "eigen residual": 1e-8,
        "solver residual": 1e-9,
        "Parseval": 1e-10,
        "intensity split": 1e-12,
        "reconstruction": 1e-10,
        "spectral vs direct": 1e-6,
    }
    return [
        CheckResult(name=name, passed=bool(worst[name] < limits[name]),
                    worst=worst[name], limit=limits[name])
        for name in worst
    ]
