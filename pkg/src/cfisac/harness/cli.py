"""Command-line entry point: one subcommand per experiment kind."""

from __future__ import annotations

import argparse
import sys

from ..errors import CfIsacError
from .config import FORMATS, KINDS, ExperimentConfig, load_config, parse_config, with_overrides
from .experiments import run_experiment
from .results import rows_to_csv, rows_to_json, write_results

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def build_parser():
    parser = argparse.ArgumentParser(prog="cfisac", description="Cell-free OTFS ISAC bounds and power allocation.")
    sub = parser.add_subparsers(dest="kind", required=True, metavar="EXPERIMENT")
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", metavar="PATH", help="sectioned key-value config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--trials", type=int, help="Monte Carlo trials (overrides the config)")
        p.add_argument("--out", metavar="PATH", help="output file; stdout when omitted")
        p.add_argument("--format", choices=FORMATS, help="output format (default csv)")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        p.add_argument("--timing", action="store_true", help="record wall-clock runtime per row")
    return parser


def load(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.kind) if args.config else parse_config("", args.kind)
    return with_overrides(
        cfg,
        seed=args.seed,
        trials=args.trials,
        out=args.out,
        format=args.format,
        threads=args.threads,
        timing=True if args.timing else None,
    )


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args)
        rows = run_experiment(cfg)
        if cfg.out:
            write_results(rows, cfg.out, cfg.format)
        else:
            sys.stdout.write(rows_to_csv(rows) if cfg.format == "csv" else rows_to_json(rows))
    except (CfIsacError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    statuses = {r.status for r in rows}
    if rows and statuses == {"infeasible"}:
        print("every sweep point is infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
