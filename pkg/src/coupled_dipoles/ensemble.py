"""Monte-Carlo driver: per-configuration pipeline and deterministic averaging.

Every configuration index maps to an independent RNG stream through a
splitmix64 derivation from the master seed, so configurations can be
computed in any order and on any number of workers.  The accumulator keeps
each configuration's contribution separately and reduces them in ascending
index order at finalization; together with BLAS thread pinning inside the
per-configuration pipeline this makes ensemble outputs bitwise reproducible
for any worker count and any split/merge pattern.
"""

from __future__ import annotations

import logging
import pickle
import sys
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import modes as modes_mod
from .coupling import DriveField, build_matrices, solve_steady_state, spectrum_sweep
from .geometry import GeometrySpec, UniformCylinder, sample_positions
from .modes import EnergyHistogram, FourierMap, diagonalize_real_part
from .scattering import SpectrumCurve, forward_intensity, intensity_at_angle, total_excitation

__all__ = [
    "GridSpec",
    "RunConfig",
    "ConfigBundle",
    "EnsembleAccumulator",
    "EnsembleResult",
    "BinnedMeans",
    "FailureBudgetError",
    "ConfigurationError",
    "splitmix64",
    "derive_seed",
    "run_single_configuration",
    "run_ensemble",
    "merge_accumulators",
    "bin_by_energy",
]

logger = logging.getLogger(__name__)

SEED_DERIVATION = "splitmix64(master_seed + (index+1)*golden)"

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Abort the ensemble when more than this fraction of configurations fails.
FAILURE_BUDGET = 0.01

# Tolerances for the per-configuration consistency checks.
_ORTHONORMALITY_TOL = 1e-10
_EIGEN_RESIDUAL_TOL = 1e-8
_TRACELESS_TOL = 1e-8
_PARSEVAL_RTOL = 1e-10
_RECONSTRUCTION_RTOL = 1e-10


def splitmix64(state: int) -> int:
    """One splitmix64 output for the given pre-increment state."""
    z = (state + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Child seed for one configuration.

    Equals the (index+1)-th output of the splitmix64 stream seeded with
    `master_seed`; splitmix64 is a bijection of the 64-bit state, so all
    indices of a run receive distinct seeds.
    """
    if index < 0:
        raise ValueError("index must be non-negative")
    return splitmix64((master_seed + index * _GOLDEN) & _MASK64)


class FailureBudgetError(RuntimeError):
    """More than the tolerated fraction of configurations failed."""


class ConfigurationError(RuntimeError):
    """A single configuration failed; carries the configuration index."""

    def __init__(self, index: int, message: str):
        super().__init__(f"configuration {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class GridSpec:
    """Uniform detuning grid from `start` to `stop` inclusive."""

    start: float
    stop: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        if not self.stop > self.start:
            raise ValueError("grid stop must exceed start")
        n = (self.stop - self.start) / self.step
        if abs(n - round(n)) > 1e-6:
            raise ValueError("grid span must be an integer number of steps")

    @property
    def n_points(self) -> int:
        return int(round((self.stop - self.start) / self.step)) + 1

    def array(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.n_points)


def _merge_grids(*grids: np.ndarray) -> np.ndarray:
    # Round to 9 decimals so coarse/fine grid points that should coincide
    # (and Delta = 0 in particular) collapse to one exact value.
    return np.unique(np.round(np.concatenate(grids), 9))


@dataclass(frozen=True)
class RunConfig:
    """Everything one ensemble run depends on."""

    geometry: GeometrySpec
    rabi: float = 1e-3
    coarse_grid: GridSpec = GridSpec(-20.0, 20.0, 0.25)
    fine_grid: GridSpec | None = GridSpec(-1.0, 1.0, 0.02)
    n_configs: int = 1000
    master_seed: int = 0
    modes_enabled: bool = True
    fourier_enabled: bool = True
    angles: tuple[float, ...] = ()
    azimuth_average: bool = False
    energy_bin_width: float = 0.5
    energy_bin_range: float = 20.0
    fine_dos_width: float = 0.1
    fine_dos_range: float = 2.0
    excitation_detunings: tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0)
    kf_oversampling: int = 8
    kf_max: float = 2.0
    backend: str = "auto"
    check_invariants: bool = True
    dump_positions: bool = False

    def __post_init__(self):
        if self.n_configs < 1:
            raise ValueError("n_configs must be >= 1")
        if not self.rabi > 0:
            raise ValueError("rabi must be positive")
        if not 0 <= self.master_seed <= _MASK64:
            raise ValueError("master_seed must fit in 64 bits")
        if self.backend not in ("auto", "direct", "spectral"):
            raise ValueError(f"unknown backend {self.backend!r}")
        for theta in self.angles:
            if not 0.0 <= theta < np.pi / 2:
                raise ValueError(f"detection angle {theta} outside [0, pi/2)")
        if self.fourier_enabled and not self.modes_enabled:
            raise ValueError("fourier analysis requires modes_enabled")
        if self.modes_enabled:
            if not (self.energy_bin_width > 0 and self.energy_bin_range > 0):
                raise ValueError("energy binning parameters must be positive")
            if not (self.fine_dos_width > 0 and self.fine_dos_range > 0):
                raise ValueError("fine DOS parameters must be positive")
        if self.fourier_enabled:
            if self.kf_oversampling < 1 or not self.kf_max > 0:
                raise ValueError("k_f grid parameters invalid")

    def detuning_grid(self) -> np.ndarray:
        if self.fine_grid is None:
            return _merge_grids(self.coarse_grid.array())
        return _merge_grids(self.coarse_grid.array(), self.fine_grid.array())

    def energy_bin_edges(self) -> np.ndarray:
        n = int(round(2 * self.energy_bin_range / self.energy_bin_width))
        return -self.energy_bin_range + self.energy_bin_width * np.arange(n + 1)

    def fine_dos_edges(self) -> np.ndarray:
        n = int(round(2 * self.fine_dos_range / self.fine_dos_width))
        return -self.fine_dos_range + self.fine_dos_width * np.arange(n + 1)

    def axial_extent(self) -> float:
        """Cloud extent along z used to set the k_f sampling density."""
        shape = self.geometry.shape
        if isinstance(shape, UniformCylinder):
            return shape.length
        return 6.0 * shape.sigma_z

    def kf_grid(self) -> np.ndarray:
        spacing = 2.0 * np.pi / (self.kf_oversampling * self.axial_extent())
        n = int(np.floor(self.kf_max / spacing)) + 1
        return spacing * np.arange(n)


@dataclass(eq=False)
class ConfigBundle:
    """One configuration's contribution to every ensemble average."""

    index: int
    seed: int
    resample_count: int
    backend_used: str
    i_total: np.ndarray
    i_coherent: np.ndarray
    i_incoherent: np.ndarray
    excitation: np.ndarray
    angle_intensity: np.ndarray  # (n_angles, n_detunings)
    dos_counts: np.ndarray | None = None
    dos_underflow: int = 0
    dos_overflow: int = 0
    dos_fine_counts: np.ndarray | None = None
    capability_sum: np.ndarray | None = None
    p2_sum: np.ndarray | None = None  # (n_excitation_detunings, n_bins)
    fourier_sum: np.ndarray | None = None  # (n_bins, n_kf)
    positions: np.ndarray | None = None


def _bin_sums(energies: np.ndarray, values: np.ndarray, edges: np.ndarray):
    """Per-bin sums and counts; values may be (n,) or (m, n) row-wise."""
    idx = np.searchsorted(edges, energies, side="right") - 1
    inside = (idx >= 0) & (idx < edges.size - 1) & (energies < edges[-1])
    n_bins = edges.size - 1
    counts = np.bincount(idx[inside], minlength=n_bins).astype(np.int64)
    values = np.atleast_2d(values)
    sums = np.zeros((values.shape[0], n_bins))
    for row in range(values.shape[0]):
        sums[row] = np.bincount(idx[inside], weights=values[row, inside],
                                minlength=n_bins)
    return sums, counts


@dataclass(eq=False)
class BinnedMeans:
    """Per-bin arithmetic means; empty bins hold NaN."""

    centers: np.ndarray
    mean: np.ndarray
    count: np.ndarray


def bin_by_energy(pairs, bin_edges) -> BinnedMeans:
    """Mean of values grouped by which energy bin each (energy, value) hits.

    `pairs` is a sequence of (energy, value) tuples or an (n, 2) array.
    Entries outside the edges are ignored; empty bins are NaN.
    """
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs,
                     dtype=float)
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or not np.all(np.diff(edges) > 0):
        raise ValueError("bin_edges must be strictly increasing with >= 2 entries")
    if arr.size == 0:
        energies = values = np.empty(0)
    else:
        energies, values = arr[:, 0], arr[:, 1]
    sums, counts = _bin_sums(energies, values, edges)
    with np.errstate(invalid="ignore"):
        mean = np.where(counts > 0, sums[0] / counts, np.nan)
    return BinnedMeans(centers=0.5 * (edges[1:] + edges[:-1]), mean=mean, count=counts)


def _excitation_state_indices(grid: np.ndarray, detunings) -> dict[float, int | None]:
    """Map each requested detuning to its grid index, or None if absent."""
    out = {}
    for d in detunings:
        hits = np.flatnonzero(np.abs(grid - d) < 1e-9)
        out[float(d)] = int(hits[0]) if hits.size else None
    return out


def _check_basis(basis, m_real) -> None:
    r = basis.vectors
    gram_err = np.abs(r.T @ r - np.eye(r.shape[0])).max()
    if gram_err >= _ORTHONORMALITY_TOL:
        raise RuntimeError(f"orthonormality defect {gram_err:.3e}")
    scale = max(np.abs(basis.energies).max(), 1e-300)
    eig_err = np.abs(m_real @ r - r * basis.energies[None, :]).max()
    if eig_err >= _EIGEN_RESIDUAL_TOL * scale:
        raise RuntimeError(f"eigen residual {eig_err:.3e}")
    trace_err = abs(basis.energies.sum())
    if trace_err >= _TRACELESS_TOL * basis.n_modes * scale:
        raise RuntimeError(f"trace defect {trace_err:.3e}")


def run_single_configuration(config: RunConfig, index: int) -> ConfigBundle:
    """Sample, solve and reduce one configuration; pure in (config, index).

    BLAS pools are pinned to one thread for the whole pipeline so results do
    not depend on how many ensemble workers share the machine.
    """
    if not 0 <= index < config.n_configs:
        raise ValueError(f"index {index} outside [0, {config.n_configs})")
    seed = derive_seed(config.master_seed, index)
    with threadpool_limits(limits=1):
        try:
            return _pipeline(config, index, seed)
        except ConfigurationError:
            raise
        except Exception as exc:  # tagged with the configuration index
            raise ConfigurationError(index, f"{type(exc).__name__}: {exc}") from exc


def _pipeline(config: RunConfig, index: int, seed: int) -> ConfigBundle:
    cloud = sample_positions(config.geometry, seed)
    matrices = build_matrices(cloud)
    drive = DriveField.plane_wave(cloud, rabi=config.rabi, detuning=0.0)
    grid = config.detuning_grid()
    sweep = spectrum_sweep(matrices, drive.amplitudes, config.rabi, grid,
                           backend=config.backend)

    n_grid = grid.size
    i_total = np.empty(n_grid)
    i_coherent = np.empty(n_grid)
    i_incoherent = np.empty(n_grid)
    excitation = np.empty(n_grid)
    angle_intensity = np.empty((len(config.angles), n_grid))
    for i, state in enumerate(sweep):
        i_total[i], i_coherent[i], i_incoherent[i] = forward_intensity(state, cloud)
        excitation[i] = i_incoherent[i]
        for a, theta in enumerate(config.angles):
            angle_intensity[a, i] = intensity_at_angle(
                state, cloud, theta, azimuth_average=config.azimuth_average
            )

    bundle = ConfigBundle(
        index=index, seed=seed, resample_count=cloud.resample_count,
        backend_used=sweep.backend_used,
        i_total=i_total, i_coherent=i_coherent, i_incoherent=i_incoherent,
        excitation=excitation, angle_intensity=angle_intensity,
        positions=cloud.positions.copy() if config.dump_positions else None,
    )
    if not config.modes_enabled:
        return bundle

    basis = diagonalize_real_part(matrices)
    if config.check_invariants:
        _check_basis(basis, matrices.m_real)

    edges = config.energy_bin_edges()
    capabilities, amplitudes = modes_mod.emission_capability(basis, cloud)
    cap_sums, counts = _bin_sums(basis.energies, capabilities, edges)
    bundle.capability_sum = cap_sums[0]
    bundle.dos_counts = counts
    bundle.dos_underflow = int(np.sum(basis.energies < edges[0]))
    bundle.dos_overflow = int(np.sum(basis.energies >= edges[-1]))
    fine_edges = config.fine_dos_edges()
    bundle.dos_fine_counts = np.histogram(basis.energies, bins=fine_edges)[0].astype(np.int64)

    # Mode excitations at the requested detunings (reusing sweep states
    # where the detuning sits on the grid, solving directly otherwise).
    index_map = _excitation_state_indices(grid, config.excitation_detunings)
    p2_rows = np.empty((len(config.excitation_detunings), basis.n_modes))
    forward_phase = np.exp(-1j * cloud.z)
    for row, d in enumerate(config.excitation_detunings):
        grid_idx = index_map[float(d)]
        state = (sweep[grid_idx] if grid_idx is not None
                 else solve_steady_state(matrices, drive.amplitudes, float(d), config.rabi))
        p = modes_mod.mode_excitations(basis, state)
        p2_rows[row] = np.abs(p) ** 2
        if config.check_invariants:
            b_norm = total_excitation(state)
            parseval = abs(p2_rows[row].sum() - b_norm) / b_norm
            if parseval >= _PARSEVAL_RTOL:
                raise ConfigurationError(index, f"Parseval defect {parseval:.3e}")
            direct_amp = forward_phase @ state.amplitudes
            recon = abs(p @ amplitudes - direct_amp) / abs(direct_amp)
            if recon >= _RECONSTRUCTION_RTOL:
                raise ConfigurationError(index, f"reconstruction defect {recon:.3e}")
    p2_sums, _ = _bin_sums(basis.energies, p2_rows, edges)
    bundle.p2_sum = p2_sums

    if config.fourier_enabled:
        kf = config.kf_grid()
        fourier = modes_mod.spatial_fourier(basis, cloud, kf)
        f_sums, _ = _bin_sums(basis.energies, np.abs(fourier).T, edges)
        bundle.fourier_sum = f_sums.T  # (n_bins, n_kf)
    return bundle


@dataclass(eq=False)
class EnsembleResult:
    """Finalized ensemble averages for one run."""

    config: RunConfig
    config_count: int
    failed: tuple[tuple[int, str], ...]
    spectrum: SpectrumCurve
    angle_spectra: tuple[SpectrumCurve, ...]
    dos: EnergyHistogram | None
    dos_fine: EnergyHistogram | None
    capability: BinnedMeans | None
    fourier_map: FourierMap | None
    excitation_detunings: tuple[float, ...]
    excitation_hist: np.ndarray | None  # (n_detunings, n_bins) mean |p_j|^2
    total_resamples: int
    direct_fallbacks: int
    positions: dict[int, np.ndarray] | None = None

    @property
    def energy_bin_centers(self) -> np.ndarray:
        edges = self.config.energy_bin_edges()
        return 0.5 * (edges[1:] + edges[:-1])


class EnsembleAccumulator:
    """Deterministic collector of per-configuration bundles.

    Contributions are stored per configuration index and reduced in
    ascending index order at finalization, which makes merging exactly
    associative and commutative and the finalized averages independent of
    scheduling.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.bundles: dict[int, ConfigBundle] = {}
        self.failures: dict[int, str] = {}

    @property
    def config_count(self) -> int:
        return len(self.bundles)

    def add(self, bundle: ConfigBundle) -> None:
        if bundle.index in self.bundles:
            raise ValueError(f"configuration {bundle.index} already accumulated")
        self.bundles[bundle.index] = bundle

    def record_failure(self, index: int, message: str) -> None:
        self.failures[index] = message

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        if self.config != other.config:
            raise ValueError("cannot merge accumulators with different run configs")
        merged = EnsembleAccumulator(self.config)
        merged.bundles.update(self.bundles)
        for idx, bundle in other.bundles.items():
            if idx in merged.bundles:
                raise ValueError(f"configuration {idx} present in both accumulators")
            merged.bundles[idx] = bundle
        merged.failures.update(self.failures)
        merged.failures.update(other.failures)
        return merged

    def finalize(self) -> EnsembleResult:
        if not self.bundles:
            raise ValueError("no successful configurations to average")
        config = self.config
        order = sorted(self.bundles)
        stack = [self.bundles[i] for i in order]
        n = len(stack)
        grid = config.detuning_grid()

        def mean_of(attr):
            return np.sum(np.stack([getattr(b, attr) for b in stack]), axis=0) / n

        i_total = mean_of("i_total")
        i_coherent = mean_of("i_coherent")
        i_incoherent = mean_of("i_incoherent")
        excitation = mean_of("excitation")
        spectrum = SpectrumCurve(
            detunings=grid, i_total=i_total, i_coherent=i_coherent,
            i_incoherent=i_incoherent, excitation=excitation,
        )
        angle_mean = (np.sum(np.stack([b.angle_intensity for b in stack]), axis=0) / n
                      if config.angles else np.empty((0, grid.size)))
        angle_spectra = tuple(
            SpectrumCurve(
                detunings=grid, i_total=angle_mean[a],
                i_coherent=angle_mean[a] - i_incoherent,
                i_incoherent=i_incoherent, excitation=excitation,
                detection_angle=theta,
                azimuth="16-point average" if config.azimuth_average else "y-z plane",
            )
            for a, theta in enumerate(config.angles)
        )

        dos = dos_fine = capability = fourier_map = None
        excitation_hist = None
        if config.modes_enabled:
            edges = config.energy_bin_edges()
            counts = np.sum(np.stack([b.dos_counts for b in stack]), axis=0)
            underflow = sum(b.dos_underflow for b in stack)
            overflow = sum(b.dos_overflow for b in stack)
            dos = _histogram_from_counts(edges, counts, underflow, overflow)
            fine_edges = config.fine_dos_edges()
            fine_counts = np.sum(np.stack([b.dos_fine_counts for b in stack]), axis=0)
            dos_fine = _histogram_from_counts(fine_edges, fine_counts, 0, 0)
            cap_sum = np.sum(np.stack([b.capability_sum for b in stack]), axis=0)
            with np.errstate(invalid="ignore"):
                cap_mean = np.where(counts > 0, cap_sum / counts, np.nan)
            capability = BinnedMeans(
                centers=0.5 * (edges[1:] + edges[:-1]), mean=cap_mean, count=counts,
            )
            p2_sum = np.sum(np.stack([b.p2_sum for b in stack]), axis=0)
            with np.errstate(invalid="ignore"):
                excitation_hist = np.where(counts[None, :] > 0,
                                           p2_sum / counts[None, :], np.nan)
            if config.fourier_enabled:
                f_sum = np.sum(np.stack([b.fourier_sum for b in stack]), axis=0)
                with np.errstate(invalid="ignore"):
                    f_mean = np.where(counts[:, None] > 0,
                                      f_sum / counts[:, None], np.nan)
                fourier_map = FourierMap(
                    bin_edges=edges, k_f_grid=config.kf_grid(),
                    mean_abs=np.nan_to_num(f_mean), counts=counts,
                )

        positions = None
        if config.dump_positions:
            positions = {b.index: b.positions for b in stack if b.positions is not None}
        spectral_requested = (config.backend == "spectral"
                              or (config.backend == "auto" and grid.size >= 50))
        return EnsembleResult(
            config=config, config_count=n,
            failed=tuple(sorted(self.failures.items())),
            spectrum=spectrum, angle_spectra=angle_spectra,
            dos=dos, dos_fine=dos_fine, capability=capability,
            fourier_map=fourier_map,
            excitation_detunings=config.excitation_detunings,
            excitation_hist=excitation_hist,
            total_resamples=sum(b.resample_count for b in stack),
            direct_fallbacks=sum(
                1 for b in stack
                if spectral_requested and b.backend_used == "direct"
            ),
            positions=positions,
        )


def _histogram_from_counts(edges, counts, underflow, overflow) -> EnergyHistogram:
    centers = 0.5 * (edges[1:] + edges[:-1])
    area = np.trapezoid(counts.astype(float), centers)
    density = counts / area if area > 0 else counts.astype(float)
    return EnergyHistogram(bin_edges=edges, counts=counts, density=density,
                           underflow=int(underflow), overflow=int(overflow))


def merge_accumulators(a: EnsembleAccumulator, b: EnsembleAccumulator) -> EnsembleAccumulator:
    """Combine two disjoint accumulators built from the same RunConfig."""
    return a.merge(b)


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

_CHECKPOINT_VERSION = 1


def _save_checkpoint(path: Path, acc: EnsembleAccumulator) -> None:
    payload = {
        "version": _CHECKPOINT_VERSION,
        "config": acc.config,
        "bundles": acc.bundles,
        "failures": acc.failures,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)
    tmp.replace(path)


def _load_checkpoint(path: Path, config: RunConfig) -> EnsembleAccumulator:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    if payload["config"] != config:
        raise ValueError(f"checkpoint {path} was written for a different run config")
    acc = EnsembleAccumulator(config)
    acc.bundles = payload["bundles"]
    acc.failures = payload["failures"]
    return acc


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def _worker(args) -> tuple[int, ConfigBundle | None, str | None]:
    config, index = args
    try:
        return index, run_single_configuration(config, index), None
    except Exception as exc:
        return index, None, f"{type(exc).__name__}: {exc}"


class _Progress:
    def __init__(self, total: int, enabled: bool, stream=None):
        self.total = total
        self.enabled = enabled
        self.stream = stream if stream is not None else sys.stderr
        self.done = 0
        self.start = time.monotonic()
        self.report_every = max(1, total // 100)

    def step(self) -> None:
        self.done += 1
        if not self.enabled:
            return
        if self.done % self.report_every and self.done != self.total:
            return
        elapsed = time.monotonic() - self.start
        rate = self.done / elapsed if elapsed > 0 else float("inf")
        eta = (self.total - self.done) / rate if rate > 0 else float("inf")
        print(
            f"configs {self.done}/{self.total}  elapsed {elapsed:7.1f}s  "
            f"eta {eta:7.1f}s", file=self.stream, flush=True,
        )


def run_ensemble(config: RunConfig, n_workers: int = 1, progress: bool = False,
                 checkpoint_path=None, checkpoint_every: int | None = None) -> EnsembleResult:
    """Run every configuration of `config` and average the results.

    Configurations run on `n_workers` processes (in-process when 1).  Failed
    configurations are skipped and logged; if more than 1% of the ensemble
    fails the run aborts with FailureBudgetError.  With `checkpoint_path`
    set, the accumulator is snapshotted every `checkpoint_every` finished
    configurations and a run restarted with the same config resumes from the
    snapshot.
    """
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    checkpoint_path = Path(checkpoint_path) if checkpoint_path is not None else None
    if checkpoint_path is not None and checkpoint_path.exists():
        acc = _load_checkpoint(checkpoint_path, config)
        logger.info("resumed from checkpoint %s with %d configurations",
                    checkpoint_path, acc.config_count)
    else:
        acc = EnsembleAccumulator(config)
    pending = [i for i in range(config.n_configs)
               if i not in acc.bundles and i not in acc.failures]
    tracker = _Progress(config.n_configs, progress)
    tracker.done = config.n_configs - len(pending)
    since_checkpoint = 0

    def note(index, bundle, error):
        nonlocal since_checkpoint
        if bundle is not None:
            acc.add(bundle)
        else:
            logger.warning("configuration %d failed: %s", index, error)
            acc.record_failure(index, error)
        tracker.step()
        since_checkpoint += 1
        if (checkpoint_path is not None and checkpoint_every
                and since_checkpoint >= checkpoint_every):
            _save_checkpoint(checkpoint_path, acc)
            since_checkpoint = 0

    if n_workers == 1:
        for index in pending:
            note(*_worker((config, index)))
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = {pool.submit(_worker, (config, i)) for i in pending}
            while futures:
                finished, futures = wait(futures, return_when=FIRST_COMPLETED)
                for fut in finished:
                    note(*fut.result())

    if checkpoint_path is not None and checkpoint_every:
        _save_checkpoint(checkpoint_path, acc)
    n_failed = len(acc.failures)
    if n_failed > FAILURE_BUDGET * config.n_configs:
        raise FailureBudgetError(
            f"{n_failed}/{config.n_configs} configurations failed "
            f"(budget {FAILURE_BUDGET:.0%}); indices "
            f"{sorted(acc.failures)[:20]}"
        )
    return acc.finalize()


def single_run_config(config: RunConfig, index: int = 0) -> RunConfig:
    """Convenience: the same run restricted to one configuration."""
    return replace(config, n_configs=max(index + 1, 1))
