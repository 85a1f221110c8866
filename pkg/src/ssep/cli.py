"""``ssep`` command line: run an experiment config or print a template."""

from __future__ import annotations

import argparse
import logging
import sys

from .exact import TruncationError
from .harness import TEMPLATE, ConfigError, parse_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_BREACH = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config", help="path to a `key = value` config file")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--replicas", type=int, help="override the number of replicas")
    run.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--out", dest="output_path", help="override the output CSV path")
    run.add_argument("--tail-bound", type=float, dest="tail_bound",
                     help="override the window tail bound")
    run.add_argument("--strict", action="store_true",
                     help="exit with status 3 if any tested z-score is out of range")
    sub.add_parser("print-config-template", help="print an annotated config file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "print-config-template":
        sys.stdout.write(TEMPLATE)
        return EXIT_OK

    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        config = parse_config(text, seed=args.seed, replicas=args.replicas,
                              output_path=args.output_path, tail_bound=args.tail_bound)
    except (OSError, UnicodeDecodeError, ConfigError) as err:
        print(f"ssep: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        rows = run_experiment(config, workers=max(1, args.workers))
    except (OSError, ValueError, TruncationError) as err:
        print(f"ssep: run failed: {err}", file=sys.stderr)
        return EXIT_RUNTIME

    breaches = [r for r in rows if r.breach]
    for r in breaches:
        print(f"ssep: z-score breach: t={r.t:g} {r.estimator} z={r.z_score:.3g}", file=sys.stderr)
    if args.strict and breaches:
        return EXIT_BREACH
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
