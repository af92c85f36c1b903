"""Command-line entry point: ``gensemcom <subcommand> [--config C] [--out DIR] [--seed-override N]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import SemComError
from . import experiments
from .config import load_config
from .plotting import plot_all


def _train(cfg, out):
    experiments.train_models(cfg, out)
    return [out / "train_log.csv"]


COMMANDS = {
    "train": _train,
    "case-study": lambda cfg, out: [experiments.run_case_study(cfg, out)],
    "fl": lambda cfg, out: [experiments.run_fl_experiment(cfg, out)],
    "scheduler": lambda cfg, out: [experiments.run_scheduler_experiment(cfg, out)],
    "encode-offload": lambda cfg, out: list(experiments.run_encode_offload(cfg, out)),
    "plot": lambda cfg, out: plot_all(out),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gensemcom", description="Generative semantic-communication simulator")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="scenario JSON (defaults apply for missing keys)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed-override", type=int, help="run a single seed instead of the configured list")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed_override is not None:
            cfg = cfg.with_seed(args.seed_override)
        args.out.mkdir(parents=True, exist_ok=True)
        for path in COMMANDS[args.command](cfg, args.out):
            print(path)
    except (SemComError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
