"""Command line entry point: ``hardballs <kind> --config FILE``."""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, SamplingFailed
from .experiments import EXIT_CONFIG, KINDS, load_config, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hardballs",
        description="Seeded hard-ball experiments: simulation, tangent-dynamics checks and certificates.",
    )
    parser.add_argument("kind", choices=KINDS, help="experiment to run")
    parser.add_argument("--config", required=True, help="INI configuration file")
    parser.add_argument("--output", help="output directory (overrides experiment.output_dir)")
    parser.add_argument("--seed", type=int, help="override the configured RNG seed")
    parser.add_argument("--quiet", action="store_true", help="print nothing on success")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, kind=args.kind, seed=args.seed, output=args.output)
    except (ConfigError, ValueError) as exc:
        print(f"hardballs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run(cfg)
    except SamplingFailed as exc:
        print(f"hardballs: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.quiet or report.exit_code:
        for check in report.checks:
            print(f"{'PASS' if check['passed'] else 'FAIL'}  {check['name']}")
        if cfg.kind == "estimates":
            print(json.dumps(report.to_dict()["data"], indent=1, sort_keys=True))
        print(f"status: {report.status} (exit {report.exit_code})")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
