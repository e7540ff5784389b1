"""Command line interface: ``run``, ``verify`` and ``study`` subcommands.

Exit status is 0 exactly when every applicable check passes, 1 on a failed
check or aborted run, and 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .io import OutputError, load_trajectory, output_dir, write_outputs
from .stepper import SimulationAbort
from .verification import verify_trajectory

log = logging.getLogger("thermodamage")

STUDY_KINDS = ("tau", "delta", "regularization", "manufactured-time", "manufactured-space")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermodamage", description="Thermoviscoelastic damage simulation and verification.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command")

    r = sub.add_parser("run", help="simulate, verify and write outputs")
    r.add_argument("config", help="INI configuration file")
    r.add_argument("-o", "--output", help="output directory (default: $THERMODAMAGE_OUTPUT_DIR, else [output] dir of the config)")

    v = sub.add_parser("verify", help="verify a stored run directory")
    v.add_argument("directory", help="directory written by 'run'")
    v.add_argument("--max-points", type=int, default=33, help="time levels sampled for pairwise checks")

    s = sub.add_parser("study", help="refinement studies")
    s.add_argument("config", nargs="?", help="INI configuration (not needed for manufactured studies)")
    s.add_argument("--kind", choices=STUDY_KINDS, default="tau")
    s.add_argument("--levels", type=int, default=4)
    s.add_argument("--deltas", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3, 0.0])
    s.add_argument("--nus", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4])
    s.add_argument("-o", "--output", help="write the study table to this file")
    return p


def _run(args) -> int:
    cfg = load_config(args.config)
    out = args.output or output_dir(cfg.output.dir)
    from .config import run_simulation

    try:
        traj = run_simulation(cfg)
    except SimulationAbort as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        if exc.trajectory is not None:
            write_outputs(exc.trajectory, None, out, cfg.to_text(), cfg.output.snapshot_every)
        return 1
    report = verify_trajectory(traj)
    write_outputs(traj, report, out, cfg.to_text(), cfg.output.snapshot_every)
    print(report.to_table(), end="")
    print(f"outputs written to {out}")
    return 0 if report.passed else 1


def _verify(args) -> int:
    traj = load_trajectory(args.directory)
    report = verify_trajectory(traj, max_points=args.max_points)
    print(report.to_table(), end="")
    return 0 if report.passed else 1


def _study(args) -> int:
    from . import studies

    if args.kind.startswith("manufactured"):
        table = studies.manufactured_heat_study(args.kind.split("-")[1], levels=args.levels)
    else:
        if args.config is None:
            print("study: a configuration file is required for this kind", file=sys.stderr)
            return 2
        cfg = load_config(args.config)
        try:
            if args.kind == "tau":
                table = studies.tau_refinement_study(cfg, levels=args.levels)
            elif args.kind == "delta":
                table = studies.delta_study(cfg, deltas=args.deltas)
            else:
                table = studies.regularization_study(cfg, nus=args.nus)
        except studies.StudyError as exc:
            print(f"study aborted: {exc}", file=sys.stderr)
            if exc.report is not None:
                print(exc.report.to_table(), end="", file=sys.stderr)
            return 1
    text = table.to_text()
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return {"run": _run, "verify": _verify, "study": _study}[args.command](args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OutputError as exc:
        print(str(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
