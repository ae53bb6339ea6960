"""Command-line entry point: ``commgp <subcommand> [--config FILE] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .. import __version__, persym
from ..errors import (
    BadTargetDim,
    CommGPError,
    ConfigError,
    DistortionOutOfRange,
    MissingColumn,
    ParseError,
    RateTooLarge,
)
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
# invalid requests or inputs rather than failures of the computation
_INPUT_ERRORS = (ConfigError, ParseError, MissingColumn, RateTooLarge, BadTargetDim, DistortionOutOfRange)

SUBCOMMANDS = {
    "rd-curve": "rd_curve",
    "dimred-compare": "dimred_compare",
    "gp1d": "gp1d",
    "rate-sweep": "gp_rate_sweep",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="commgp", description="Communication-limited GP experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, experiment in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {experiment} experiment")
        p.add_argument("--config", help="JSON config file (schema 1)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory for CSV and JSON")
    info = sub.add_parser("info", help="print version and codec tables")
    info.add_argument("--config", help="validate a config file and echo it")
    return parser


def _load_config(path: str | None, experiment: str, seed: int | None) -> ExperimentConfig:
    if path:
        cfg = ExperimentConfig.load(path)
        if cfg.experiment != experiment:
            raise ConfigError(f"config is for {cfg.experiment!r}, subcommand runs {experiment!r}")
    else:
        cfg = ExperimentConfig(experiment)
    if seed is not None:
        cfg.seed = seed
    return cfg


def _info(args) -> None:
    print(f"commgp {__version__}")
    print("experiments: " + ", ".join(EXPERIMENTS))
    print("unit-variance scalar quantizer distortion e(1, R):")
    for r, e in enumerate(persym.unit_distortion_table()[:11]):
        print(f"  R={r:2d}  {e:.10f}")
    if args.config:
        print(json.dumps(ExperimentConfig.load(args.config).as_dict(), indent=2))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "info":
            _info(args)
            return EXIT_OK
        experiment = SUBCOMMANDS[args.command]
        cfg = _load_config(args.config, experiment, args.seed)
        result = run_experiment(cfg)
        csv_path, json_path = result.write(args.out, experiment)
        print(f"wrote {csv_path} and {json_path}")
        return EXIT_OK
    except _INPUT_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CommGPError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
