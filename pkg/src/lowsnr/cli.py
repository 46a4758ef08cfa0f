"""Command line entry point: ``lowsnr <experiment> --config <path>``."""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import EXPERIMENTS, run_experiment


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lowsnr", description="Run a configured experiment.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with open(args.config) as fh:
        cfg = json.load(fh)
    if cfg.setdefault("experiment", args.experiment) != args.experiment:
        print(f"config is for {cfg['experiment']!r}, not {args.experiment!r}", file=sys.stderr)
        return 1
    try:
        texts, failed = run_experiment(cfg, args.seed, args.out, args.threads)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name in texts:
        print(f"wrote {args.out}/{name}")
    return 2 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
