"""Command-line entry point.

    thgsim run CONFIG [--workers N] [--seed S] [--out DIR]
    thgsim validate CONFIG

Exit status: 0 ok, 1 configuration error, 2 numerical failure,
3 run finished but more than 1% of trajectories diverged.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config, with_overrides
from .scenarios import NumericalFailure, run_scenario, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_UNRELIABLE = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thgsim", description="Third-harmonic generation scenarios")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and write data + manifest")
    run.add_argument("config")
    run.add_argument("--workers", type=int, default=None, help="worker threads (default from config)")
    run.add_argument("--seed", type=int, default=None, help="override the integration seed")
    run.add_argument("--out", default=None, help="output directory (default from config)")
    val = sub.add_parser("validate", help="check a config and print it with defaults resolved")
    val.add_argument("config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            sys.stdout.write(cfg.resolved())
            return EXIT_OK
        cfg = with_overrides(cfg, workers=args.workers, seed=args.seed, output=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        outcome = run_scenario(cfg)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    data, manifest = write_outputs(cfg, outcome)
    print(f"wrote {data} and {manifest}")
    if outcome.unreliable:
        print(f"warning: {outcome.meta['n_diverged']} of {outcome.meta['n_traj']} trajectories "
              "diverged; results flagged unreliable", file=sys.stderr)
        return EXIT_UNRELIABLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
