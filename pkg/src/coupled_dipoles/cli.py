"""Command-line entry points.

Verbs: `run` (one ensemble from a config file), `scaling` (optical-depth
sweep), `angles` (angular-detection sweep), `validate` (invariant suite at
small atom number).  Exit codes: 0 success, 2 configuration error, 3
numerical failure (budget exceeded or invariant violations).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from .analysis import RoughCurveError, find_peaks, scaling_sweep
from .ensemble import FailureBudgetError, run_ensemble
from .runio import (
    ConfigError,
    load_config,
    load_scaling_settings,
    write_outputs,
    write_peaks_csv,
    write_scaling_table,
)
from .selfcheck import run_invariant_suite

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coupled-dipoles",
        description="Monte-Carlo coupled-dipole scattering simulator",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed from the file")
        p.add_argument("--configs", type=int, default=None,
                       help="override the number of configurations")
        p.add_argument("--checkpoint-every", type=int, default=0,
                       help="snapshot the accumulator every N configurations")

    run_p = sub.add_parser("run", help="run one ensemble and write its outputs")
    common(run_p)

    scaling_p = sub.add_parser("scaling", help="collective-shift vs optical-depth sweep")
    common(scaling_p)

    angles_p = sub.add_parser("angles", help="ensemble with off-axis detection angles")
    common(angles_p)

    validate_p = sub.add_parser("validate", help="numerical invariant suite")
    validate_p.add_argument("--atoms", type=int, default=50)
    validate_p.add_argument("--configs", type=int, default=20)
    validate_p.add_argument("--seed", type=int, default=2024)
    return parser


def _apply_overrides(config, args):
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if args.configs is not None:
        config = replace(config, n_configs=args.configs)
    return config


def _cmd_run(args, require_angles=False) -> int:
    config = _apply_overrides(load_config(args.config), args)
    if require_angles and not config.angles:
        raise ConfigError("analysis.angles: at least one angle is required "
                          "for the angles command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / "checkpoint.pkl" if args.checkpoint_every > 0 else None
    start = time.monotonic()
    result = run_ensemble(
        config, n_workers=args.workers, progress=True,
        checkpoint_path=checkpoint,
        checkpoint_every=args.checkpoint_every or None,
    )
    wall = time.monotonic() - start
    try:
        peaks = find_peaks(result.spectrum)
    except RoughCurveError as exc:
        print(f"peak extraction skipped: {exc}", file=sys.stderr)
        peaks = None
    write_outputs(result, out, peaks=peaks, wall_time_s=wall, n_workers=args.workers)
    if result.failed:
        print(f"{len(result.failed)} configuration(s) failed and were skipped",
              file=sys.stderr)
    print(f"wrote {out} ({result.config_count} configurations, {wall:.1f}s)")
    return EXIT_OK


def _cmd_scaling(args) -> int:
    base = _apply_overrides(load_config(args.config), args)
    settings = load_scaling_settings(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = scaling_sweep(base, settings.mode, settings.points,
                          n_workers=args.workers, progress=True)
    if not table.rows:
        print("every scaling point failed", file=sys.stderr)
        return EXIT_NUMERICAL
    write_scaling_table(table, out / "scaling.csv")
    for i, failure in table.failed_points:
        print(f"scaling point {i} failed: {failure}", file=sys.stderr)
    print(f"wrote {out / 'scaling.csv'} ({len(table.rows)} points)")
    return EXIT_OK


def _cmd_validate(args) -> int:
    results = run_invariant_suite(n_atoms=args.atoms, n_configs=args.configs,
                                  master_seed=args.seed)
    for check in results:
        print(check.line())
    if all(c.passed for c in results):
        print("all invariants hold")
        return EXIT_OK
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            return _cmd_run(args)
        if args.verb == "angles":
            return _cmd_run(args, require_angles=True)
        if args.verb == "scaling":
            return _cmd_scaling(args)
        return _cmd_validate(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FailureBudgetError, RoughCurveError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
