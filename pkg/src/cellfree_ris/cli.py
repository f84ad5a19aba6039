"""``simulate`` command line entry point."""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError
from .harness import ExperimentError, load_experiment, write_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="simulate",
        description="Run a sweep experiment described by an INI file with "
                    "[system] and [experiment] sections; writes a CSV and a JSON manifest.")
    p.add_argument("--config", required=True, help="experiment file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trials", type=int, help="Monte-Carlo trials per drop (overrides mc_trials)")
    p.add_argument("--drops", type=int, help="number of drops (overrides drops)")
    p.add_argument("--seed", type=int, help="master seed (overrides seed)")
    p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        spec = load_experiment(args.config, drops=args.drops, mc_trials=args.trials, seed=args.seed)
        name = os.path.splitext(os.path.basename(args.config))[0]
        csv_path, man_path = write_experiment(spec, args.out, args.threads, name)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(csv_path)
    print(man_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
