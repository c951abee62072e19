"""Command line entry point: ``trstream run`` and ``trstream gen``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, DomainError, FormatError
from .harness import generate_synthetic, read_config_file, config_from_mapping, run_protocol, write_report
from .io import save_tensor

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3

# flag name -> config key
_RUN_FLAGS = {
    "algo": "algorithms",
    "rank": "rank",
    "sketch_size": "sketch_size",
    "t_new": "t_new",
    "init_fraction": "init_fraction",
    "tol": "tol",
    "max_iters": "max_iters",
    "seed": "seed",
    "reps": "repetitions",
    "input": "input",
    "synthetic": "synthetic",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trstream", description="Tensor ring decomposition of streaming tensors.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the streaming protocol and write a report")
    run.add_argument("--config", help="file of key=value lines; flags override it")
    run.add_argument("--algo", help="comma-separated algorithm names")
    run.add_argument("--rank")
    run.add_argument("--sketch-size")
    run.add_argument("--t-new")
    run.add_argument("--init-fraction")
    run.add_argument("--tol")
    run.add_argument("--max-iters")
    run.add_argument("--seed")
    run.add_argument("--reps")
    run.add_argument("--input", help="TRT1 tensor file")
    run.add_argument("--synthetic", help="I1xI2x...xIN:R")
    run.add_argument("--out", help="report path (default: stdout as CSV)")
    run.add_argument("--format", choices=("csv", "json"))

    gen = sub.add_parser("gen", help="write an exact synthetic TR tensor to a TRT1 file")
    gen.add_argument("--shape", required=True, help="I1xI2x...xIN")
    gen.add_argument("--rank", required=True, type=int)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    return parser


def _run(args) -> int:
    values = read_config_file(args.config) if args.config else {}
    # a data source on the command line replaces the one in the file
    if args.input is not None or args.synthetic is not None:
        values.pop("input", None)
        values.pop("synthetic", None)
    for flag, key in _RUN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            values[key] = value
    out = args.out or values.get("out")
    fmt = args.format or values.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown report format {fmt!r}")
    cfg = config_from_mapping(values)
    report = run_protocol(cfg)
    write_report(report, out if out else sys.stdout, fmt)
    return EXIT_OK


def _gen(args) -> int:
    try:
        shape = tuple(int(d) for d in args.shape.lower().split("x"))
    except ValueError:
        raise ConfigError(f"shape {args.shape!r} is not of the form I1xI2x...xIN") from None
    if len(shape) < 2 or min(shape) < 1 or args.rank < 1:
        raise ConfigError("shape needs at least two positive dims and rank must be positive")
    x, _ = generate_synthetic(shape, args.rank, args.seed)
    save_tensor(x, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2),
            format="%(levelname)s %(name)s: %(message)s",
        )
        return _run(args) if args.command == "run" else _gen(args)
    except ConfigError as exc:
        print(f"trstream: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"trstream: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DomainError as exc:
        print(f"trstream: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"trstream: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
