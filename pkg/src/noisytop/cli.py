"""Command-line entry point: run experiments, validate configs, build reports."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config, validate
from .experiments import assemble_report, run
from .sde import THREADS_ENV_VAR, SimulationError

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisytop",
        description=(
            "Config-driven experiments for the perturbed conservative system: "
            "deterministic flow, perturbed/limiting SDEs, and invariant-measure "
            f"diagnostics.  Set {THREADS_ENV_VAR} to parallelize ensembles."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="validate and execute a config, writing CSVs + manifest")
    p_run.add_argument("config", type=Path, help="path to a YAML experiment config")
    p_val = sub.add_parser("validate", help="check a config and list violations")
    p_val.add_argument("config", type=Path, help="path to a YAML experiment config")
    p_rep = sub.add_parser("report", help="assemble a summary table from completed runs")
    p_rep.add_argument("output_dir", type=Path, help="directory holding completed run directories")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "validate":
        try:
            config = load_config(args.config)
        except ConfigError as exc:
            for violation in exc.violations:
                print(violation)
            return 1
        violations = validate(config)
        for violation in violations:
            print(violation)
        if violations:
            return 1
        print("ok")
        return 0
    if args.command == "run":
        try:
            config = load_config(args.config)
            manifest = run(config)
        except ConfigError as exc:
            record = {
                "error": "config-validation",
                "violations": [{"field": v.field, "message": v.message} for v in exc.violations],
            }
            print(json.dumps(record, indent=2), file=sys.stderr)
            return 2
        except SimulationError as exc:
            record = {"error": "simulation", "message": str(exc)}
            print(json.dumps(record, indent=2), file=sys.stderr)
            return 3
        print(f"wrote {len(manifest.files)} files to {config.output_dir}")
        return 0
    # report
    outdir = args.output_dir
    if not outdir.is_dir():
        print(json.dumps({"error": "report", "message": f"not a directory: {outdir}"}), file=sys.stderr)
        return 2
    files, _, stats = assemble_report(outdir, outdir)
    n_runs = dict(stats).get("n_runs", 0)
    print(f"wrote {files[0]} covering {n_runs} runs")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
