"""Monte-Carlo coupled-dipole simulator for collective light scattering.

A cold cloud of fixed two-level atoms driven by a weak plane wave is modeled
as N coupled dipoles; the package samples random configurations, solves the
driven steady state across probe detunings, and averages spectra, collective
state diagnostics and spatial-order maps over the ensemble.

Units: lengths in 1/k (wavenumber k = 1, wavelength 2*pi), rates and
detunings in units of the single-atom linewidth gamma_0 = 1.
"""

__version__ = "0.1.0"

from .analysis import (
    PeakFinderSettings,
    PeakReport,
    ScalingTable,
    angular_sweep,
    find_peaks,
    optical_depth,
    scaling_sweep,
)
from .coupling import (
    CouplingMatrices,
    DriveField,
    SteadyState,
    build_matrices,
    drive_vector,
    pairwise_coupling,
    solve_steady_state,
    spectrum_sweep,
)
from .ensemble import (
    ConfigBundle,
    EnsembleAccumulator,
    EnsembleResult,
    GridSpec,
    RunConfig,
    bin_by_energy,
    derive_seed,
    merge_accumulators,
    run_ensemble,
    run_single_configuration,
)
from .geometry import (
    LAMBDA0,
    AtomCloud,
    GaussianEllipsoid,
    GeometrySpec,
    UniformCylinder,
    atom_count_for_peak_density,
    atom_count_from_density,
    peak_density,
    sample_positions,
)
from .modes import (
    EnergyHistogram,
    FourierMap,
    FourierRidge,
    ModeBasis,
    diagonalize_real_part,
    dos_histogram,
    emission_capability,
    max_spatial_frequency,
    mode_excitations,
    spatial_fourier,
)
from .scattering import (
    SpectrumCurve,
    forward_intensity,
    intensity_at_angle,
    total_excitation,
)

__all__ = [
    "__version__",
    "LAMBDA0",
    "AtomCloud",
    "GaussianEllipsoid",
    "GeometrySpec",
    "UniformCylinder",
    "atom_count_for_peak_density",
    "atom_count_from_density",
    "peak_density",
    "sample_positions",
    "CouplingMatrices",
    "DriveField",
    "SteadyState",
    "build_matrices",
    "drive_vector",
    "pairwise_coupling",
    "solve_steady_state",
    "spectrum_sweep",
    "SpectrumCurve",
    "forward_intensity",
    "intensity_at_angle",
    "total_excitation",
    "ModeBasis",
    "EnergyHistogram",
    "FourierMap",
    "FourierRidge",
    "diagonalize_real_part",
    "dos_histogram",
    "emission_capability",
    "max_spatial_frequency",
    "mode_excitations",
    "spatial_fourier",
    "GridSpec",
    "RunConfig",
    "ConfigBundle",
    "EnsembleAccumulator",
    "EnsembleResult",
    "bin_by_energy",
    "derive_seed",
    "merge_accumulators",
    "run_ensemble",
    "run_single_configuration",
    "PeakFinderSettings",
    "PeakReport",
    "ScalingTable",
    "angular_sweep",
    "find_peaks",
    "optical_depth",
    "scaling_sweep",
]
