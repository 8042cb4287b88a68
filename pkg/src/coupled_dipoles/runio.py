"""Run-configuration files and all on-disk outputs.

Config files are YAML with a strict schema: unknown keys are hard errors
naming the offending path, so typos cannot silently fall back to defaults.
Outputs are CSV files whose single-line headers name the units (lengths in
1/k, rates and detunings in gamma_0), plus a run_metadata.json that echoes
everything needed to reproduce the run bit-for-bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import PeakReport, ScalingTable
from .ensemble import SEED_DERIVATION, EnsembleResult, GridSpec, RunConfig
from .geometry import (
    RNG_ALGORITHM,
    GaussianEllipsoid,
    GeometrySpec,
    UniformCylinder,
    atom_count_from_density,
    atom_count_for_peak_density,
)

__all__ = [
    "ConfigError",
    "ScalingSettings",
    "load_config",
    "load_scaling_settings",
    "write_config",
    "config_to_dict",
    "write_outputs",
    "write_scaling_table",
]

_FLOAT_FMT = "%.12g"
_INCOMPLETE_MARKER = "INCOMPLETE"


class ConfigError(ValueError):
    """Config file violates the schema; the message names the field path."""


# ---------------------------------------------------------------------------
# Schema helpers
# ---------------------------------------------------------------------------


def _as_mapping(node, path: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(node).__name__}")
    return dict(node)


def _reject_unknown(node: dict, path: str) -> None:
    if node:
        key = sorted(node)[0]
        where = f"{path}.{key}" if path else key
        raise ConfigError(f"unknown key {where!r}")


def _get_number(node: dict, key: str, path: str, default=None, required=False):
    if key not in node:
        if required:
            raise ConfigError(f"{path}.{key}: required")
        return default
    value = node.pop(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {value!r}")
    return value


def _get_int(node: dict, key: str, path: str, default=None, required=False):
    value = _get_number(node, key, path, default=default, required=required)
    if value is not None and not isinstance(value, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {value!r}")
    return value


def _get_bool(node: dict, key: str, path: str, default: bool) -> bool:
    if key not in node:
        return default
    value = node.pop(key)
    if not isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected true/false, got {value!r}")
    return value


def _get_str(node: dict, key: str, path: str, default=None, choices=None):
    if key not in node:
        return default
    value = node.pop(key)
    if not isinstance(value, str):
        raise ConfigError(f"{path}.{key}: expected a string, got {value!r}")
    if choices and value not in choices:
        raise ConfigError(f"{path}.{key}: expected one of {sorted(choices)}, got {value!r}")
    return value


def _parse_grid(node, path: str) -> GridSpec:
    mapping = _as_mapping(node, path)
    start = _get_number(mapping, "start", path, required=True)
    stop = _get_number(mapping, "stop", path, required=True)
    step = _get_number(mapping, "step", path, required=True)
    _reject_unknown(mapping, path)
    try:
        return GridSpec(start=float(start), stop=float(stop), step=float(step))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_geometry(node, path: str) -> GeometrySpec:
    mapping = _as_mapping(node, path)
    if not mapping:
        raise ConfigError(f"{path}: required")
    kind = _get_str(mapping, "shape", path, choices={"cylinder", "gaussian"})
    if kind is None:
        raise ConfigError(f"{path}.shape: required")
    if kind == "cylinder":
        radius = _get_number(mapping, "radius", path, required=True)
        length = _get_number(mapping, "length", path, required=True)
        try:
            shape = UniformCylinder(radius=float(radius), length=float(length))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        atom_count = _get_int(mapping, "atom_count", path)
        density = _get_number(mapping, "density", path)
        if (atom_count is None) == (density is None):
            raise ConfigError(
                f"{path}: give exactly one of atom_count or density (rho/k^3)"
            )
        if atom_count is None:
            atom_count = atom_count_from_density(shape, float(density))
    else:
        sx = _get_number(mapping, "sigma_x", path, required=True)
        sy = _get_number(mapping, "sigma_y", path, required=True)
        sz = _get_number(mapping, "sigma_z", path, required=True)
        try:
            shape = GaussianEllipsoid(sigma_x=float(sx), sigma_y=float(sy),
                                      sigma_z=float(sz))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        atom_count = _get_int(mapping, "atom_count", path)
        rho0 = _get_number(mapping, "peak_density", path)
        if (atom_count is None) == (rho0 is None):
            raise ConfigError(
                f"{path}: give exactly one of atom_count or peak_density (rho0/k^3)"
            )
        if atom_count is None:
            atom_count = atom_count_for_peak_density(shape, float(rho0))
    excl = _get_number(mapping, "exclusion_radius", path)
    _reject_unknown(mapping, path)
    kwargs = {"shape": shape, "atom_count": int(atom_count)}
    if excl is not None:
        kwargs["exclusion_radius"] = float(excl)
    try:
        return GeometrySpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_document(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    return _as_mapping(document, "")


def _build_run_config(document: dict) -> RunConfig:
    geometry = _parse_geometry(document.pop("geometry", None), "geometry")

    drive = _as_mapping(document.pop("drive", None), "drive")
    rabi = _get_number(drive, "rabi", "drive", default=1e-3)
    coarse = (_parse_grid(drive.pop("coarse_grid"), "drive.coarse_grid")
              if "coarse_grid" in drive else GridSpec(-20.0, 20.0, 0.25))
    if "fine_grid" in drive:
        raw = drive.pop("fine_grid")
        fine = None if raw is None else _parse_grid(raw, "drive.fine_grid")
    else:
        fine = GridSpec(-1.0, 1.0, 0.02)
    _reject_unknown(drive, "drive")

    ens = _as_mapping(document.pop("ensemble", None), "ensemble")
    n_configs = _get_int(ens, "n_configs", "ensemble", default=1000)
    master_seed = _get_int(ens, "master_seed", "ensemble", default=0)
    _reject_unknown(ens, "ensemble")

    ana = _as_mapping(document.pop("analysis", None), "analysis")
    modes_enabled = _get_bool(ana, "modes", "analysis", True)
    fourier_enabled = _get_bool(ana, "fourier", "analysis", modes_enabled)
    angles_raw = ana.pop("angles", [])
    if not isinstance(angles_raw, list):
        raise ConfigError("analysis.angles: expected a list of angles in radians")
    angles = []
    for i, item in enumerate(angles_raw):
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise ConfigError(f"analysis.angles[{i}]: expected a number, got {item!r}")
        angles.append(float(item))
    azimuth_average = _get_bool(ana, "azimuth_average", "analysis", False)
    bin_width = _get_number(ana, "energy_bin_width", "analysis", default=0.5)
    bin_range = _get_number(ana, "energy_bin_range", "analysis", default=20.0)
    fine_dos_width = _get_number(ana, "fine_dos_width", "analysis", default=0.1)
    fine_dos_range = _get_number(ana, "fine_dos_range", "analysis", default=2.0)
    exc_raw = ana.pop("excitation_detunings", [-10.0, -5.0, 0.0, 5.0, 10.0])
    if not isinstance(exc_raw, list):
        raise ConfigError("analysis.excitation_detunings: expected a list")
    excitation_detunings = []
    for i, item in enumerate(exc_raw):
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise ConfigError(
                f"analysis.excitation_detunings[{i}]: expected a number, got {item!r}"
            )
        excitation_detunings.append(float(item))
    kf_oversampling = _get_int(ana, "kf_oversampling", "analysis", default=8)
    kf_max = _get_number(ana, "kf_max", "analysis", default=2.0)
    _reject_unknown(ana, "analysis")

    backend = _get_str(document, "backend", "", default="auto",
                       choices={"auto", "direct", "spectral"})
    checks = _get_bool(document, "checks", "", True)

    out = _as_mapping(document.pop("output", None), "output")
    dump_positions = _get_bool(out, "dump_positions", "output", False)
    _reject_unknown(out, "output")

    try:
        return RunConfig(
            geometry=geometry,
            rabi=float(rabi),
            coarse_grid=coarse,
            fine_grid=fine,
            n_configs=int(n_configs),
            master_seed=master_seed,
            modes_enabled=modes_enabled,
            fourier_enabled=fourier_enabled,
            angles=tuple(angles),
            azimuth_average=azimuth_average,
            energy_bin_width=float(bin_width),
            energy_bin_range=float(bin_range),
            fine_dos_width=float(fine_dos_width),
            fine_dos_range=float(fine_dos_range),
            excitation_detunings=tuple(excitation_detunings),
            kf_oversampling=int(kf_oversampling),
            kf_max=float(kf_max),
            backend=backend,
            check_invariants=checks,
            dump_positions=dump_positions,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


_TOP_LEVEL_KEYS = {"geometry", "drive", "ensemble", "analysis", "backend",
                   "checks", "output", "scaling"}


def load_config(path) -> RunConfig:
    """Parse a run-configuration file into a RunConfig.

    A `scaling` section, if present, is ignored here; use
    `load_scaling_settings` for it.
    """
    document = _parse_document(path)
    unknown = set(document) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r}")
    document.pop("scaling", None)
    config = _build_run_config(document)
    _reject_unknown(document, "")
    return config


class ScalingSettings:
    """Sweep mode and point list for a scaling run."""

    def __init__(self, mode: str, points: tuple[float, ...]):
        self.mode = mode
        self.points = points


def load_scaling_settings(path) -> ScalingSettings:
    document = _parse_document(path)
    section = _as_mapping(document.get("scaling"), "scaling")
    if not section:
        raise ConfigError("scaling: required for a scaling sweep")
    mode = _get_str(section, "mode", "scaling",
                    choices={"fixed_density_vary_size", "fixed_size_vary_density"})
    if mode is None:
        raise ConfigError("scaling.mode: required")
    points_raw = section.pop("points", None)
    if not isinstance(points_raw, list) or not points_raw:
        raise ConfigError("scaling.points: expected a non-empty list")
    points = []
    for i, item in enumerate(points_raw):
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise ConfigError(f"scaling.points[{i}]: expected a number, got {item!r}")
        points.append(float(item))
    _reject_unknown(section, "scaling")
    return ScalingSettings(mode=mode, points=tuple(points))


# ---------------------------------------------------------------------------
# Writing configs back out
# ---------------------------------------------------------------------------


def config_to_dict(config: RunConfig) -> dict:
    """RunConfig as the nested mapping the YAML schema uses."""
    shape = config.geometry.shape
    if isinstance(shape, UniformCylinder):
        geometry = {"shape": "cylinder", "radius": float(shape.radius),
                    "length": float(shape.length)}
    else:
        geometry = {"shape": "gaussian", "sigma_x": float(shape.sigma_x),
                    "sigma_y": float(shape.sigma_y), "sigma_z": float(shape.sigma_z)}
    geometry["atom_count"] = int(config.geometry.atom_count)
    geometry["exclusion_radius"] = float(config.geometry.exclusion_radius)

    def grid_dict(grid):
        return None if grid is None else {k: float(v) for k, v in asdict(grid).items()}

    return {
        "geometry": geometry,
        "drive": {
            "rabi": float(config.rabi),
            "coarse_grid": grid_dict(config.coarse_grid),
            "fine_grid": grid_dict(config.fine_grid),
        },
        "ensemble": {
            "n_configs": int(config.n_configs),
            "master_seed": int(config.master_seed),
        },
        "analysis": {
            "modes": config.modes_enabled,
            "fourier": config.fourier_enabled,
            "angles": [float(a) for a in config.angles],
            "azimuth_average": config.azimuth_average,
            "energy_bin_width": float(config.energy_bin_width),
            "energy_bin_range": float(config.energy_bin_range),
            "fine_dos_width": float(config.fine_dos_width),
            "fine_dos_range": float(config.fine_dos_range),
            "excitation_detunings": [float(d) for d in config.excitation_detunings],
            "kf_oversampling": int(config.kf_oversampling),
            "kf_max": float(config.kf_max),
        },
        "backend": config.backend,
        "checks": config.check_invariants,
        "output": {"dump_positions": config.dump_positions},
    }


def write_config(config: RunConfig, path) -> None:
    """Serialize a RunConfig so that load_config reads back an equal value."""
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=False)


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return _FLOAT_FMT % value


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _angle_label(theta: float) -> str:
    return _FLOAT_FMT % theta


def write_spectrum_csv(result: EnsembleResult, path: Path) -> None:
    curve = result.spectrum
    columns = [curve.detunings, curve.i_total, curve.i_coherent,
               curve.i_incoherent, curve.excitation]
    header = "delta_gamma0,i_total,i_coherent,i_incoherent,excitation"
    for angle_curve in result.angle_spectra:
        header += f",i_total_theta_{_angle_label(angle_curve.detection_angle)}"
        columns.append(angle_curve.i_total)
    _write_csv(path, header, zip(*columns))


def write_outputs(result: EnsembleResult, out_dir, peaks: PeakReport | None = None,
                  wall_time_s: float | None = None, n_workers: int | None = None) -> None:
    """Write every product of one ensemble run into `out_dir`.

    The directory carries an INCOMPLETE marker while files are being
    written; its absence marks a directory as fully written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / _INCOMPLETE_MARKER
    marker.write_text("run in progress\n", encoding="utf-8")

    write_spectrum_csv(result, out / "spectrum.csv")
    if result.dos is not None:
        _write_csv(
            out / "dos.csv", "eps_gamma0,counts,density_per_gamma0",
            zip(result.dos.centers, result.dos.counts, result.dos.density),
        )
    if result.dos_fine is not None:
        _write_csv(
            out / "dos_fine.csv", "eps_gamma0,counts,density_per_gamma0",
            zip(result.dos_fine.centers, result.dos_fine.counts, result.dos_fine.density),
        )
    if result.capability is not None:
        _write_csv(
            out / "capability_vs_energy.csv",
            "eps_gamma0,mean_capability_arb,mode_count",
            zip(result.capability.centers, result.capability.mean,
                result.capability.count),
        )
    if result.fourier_map is not None:
        fmap = result.fourier_map
        rows = (
            (center, kf, fmap.mean_abs[b, k])
            for b, center in enumerate(fmap.centers)
            for k, kf in enumerate(fmap.k_f_grid)
        )
        _write_csv(out / "fourier_map.csv", "eps_gamma0,k_f_k,mean_abs_fourier_arb", rows)
    if result.excitation_hist is not None:
        centers = result.energy_bin_centers
        rows = (
            (delta, centers[b], result.excitation_hist[i, b])
            for i, delta in enumerate(result.excitation_detunings)
            for b in range(centers.size)
        )
        _write_csv(out / "excitation_hist.csv",
                   "delta_gamma0,eps_gamma0,mean_excitation_arb", rows)
    if peaks is not None:
        write_peaks_csv(peaks, out / "peaks.csv")
    if result.positions:
        pos_dir = out / "positions"
        pos_dir.mkdir(exist_ok=True)
        for index, positions in sorted(result.positions.items()):
            _write_csv(
                pos_dir / f"config_{index:06d}.csv", "index,x_invk,y_invk,z_invk",
                ((i, *row) for i, row in enumerate(positions)),
            )

    metadata = {
        "package": "coupled-dipoles",
        "version": __version__,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "units": {"length": "1/k", "rate": "gamma_0"},
        "rng_algorithm": RNG_ALGORITHM,
        "seed_derivation": SEED_DERIVATION,
        "master_seed": result.config.master_seed,
        "n_configs": result.config.n_configs,
        "config_count": result.config_count,
        "failures": {str(i): msg for i, msg in result.failed},
        "total_resamples": result.total_resamples,
        "direct_fallbacks": result.direct_fallbacks,
        "wall_time_s": wall_time_s,
        "n_workers": n_workers,
        "config": config_to_dict(result.config),
    }
    with open(out / "run_metadata.json", "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
    marker.unlink()


def write_peaks_csv(peaks: PeakReport, path: Path) -> None:
    rows = []
    for name, peak in (("left", peaks.left_peak), ("central", peaks.central_peak),
                       ("right", peaks.right_peak)):
        if peak is not None:
            rows.append((name, peak.position, peak.height, peak.prominence))
    _write_csv(Path(path), "peak_class,position_gamma0,height_arb,prominence_arb", rows)


def write_scaling_table(table: ScalingTable, path) -> None:
    rows = (
        (r.od, r.sweep_mode, r.shift_left, r.shift_central, r.n_atoms,
         r.sigma_x, r.sigma_y, r.sigma_z, r.peak_density)
        for r in table.rows
    )
    header = ("od,sweep_mode,shift_left_gamma0,shift_central_gamma0,n_atoms,"
              "sigma_x_invk,sigma_y_invk,sigma_z_invk,peak_density_k3")
    _write_csv(Path(path), header, rows)
