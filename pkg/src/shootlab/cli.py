"""Command-line entry point.

    shootlab <command> [--config FILE] [--out PATH] [--format json|csv] [--seed N]

Exit codes: 0 success, 2 numerical divergence, 3 configuration error.
A failed verdict is reported in the output, not through the exit code.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, DivergenceError
from .experiments import COMMANDS

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_CONFIG = 3

log = logging.getLogger("shootlab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shootlab", description="Direct-shooting and costate experiments on Euler-discretized scalar control problems.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().split("\n")[0])
        p.add_argument("--config", type=Path, help="TOML configuration file")
        p.add_argument("--out", type=Path, help="output file (default: config 'output', else stdout)")
        p.add_argument("--format", choices=("json", "csv"), help="output format (default: config 'format')")
        p.add_argument("--seed", type=int, help="seed for random control vectors (overrides config)")
    return parser


def _emit(text: str, out: str | Path | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            overrides["seed"] = args.seed
        if args.format is not None:
            overrides["format"] = args.format
        if args.out is not None:
            overrides["output"] = str(args.out)
        cfg = dataclasses.replace(cfg, **overrides)
        report = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        partial = getattr(exc, "report", None)
        if partial is not None:
            _emit(partial.render(cfg.format), cfg.output)
        return EXIT_DIVERGED
    except (ValueError, TypeError) as exc:
        # invalid parameter combinations surface from constructors
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _emit(report.render(cfg.format), cfg.output)
    for name, ok in report.verdicts.items():
        log.info("%-40s %s", name, "pass" if ok else "FAIL")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
