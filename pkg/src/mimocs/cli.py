"""Command-line entry point: ``simulate mse|throughput``."""

import argparse
import logging
import sys

from .errors import ConfigError
from .harness import (ScenarioConfig, apply_overrides, format_csv, load_config,
                      run_mse_experiment, run_throughput_experiment)

EXPERIMENTS = {"mse": run_mse_experiment, "throughput": run_throughput_experiment}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simulate",
        description="Monte-Carlo CSIT estimation and joint-ZF throughput studies.")
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS))
    parser.add_argument("--config", help="flat 'key = value' scenario file (defaults if omitted)")
    parser.add_argument("--out", help="CSV destination (stdout if omitted)")
    parser.add_argument("--seed", type=int, help="master seed, overrides the config")
    parser.add_argument("--trials", type=int, help="Monte-Carlo trials, overrides the config")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set one config key; may be repeated")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="progress logging (-vv for debug)")
    return parser


def resolve_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    extra = list(args.override)
    if args.seed is not None:
        extra.append(f"seed={args.seed}")
    if args.trials is not None:
        extra.append(f"trials={args.trials}")
    for item in args.override:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
    return apply_overrides(cfg, extra)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"simulate: config error: {exc}", file=sys.stderr)
        return 2
    text = format_csv(EXPERIMENTS[args.experiment](cfg))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
