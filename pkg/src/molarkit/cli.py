"""
Command line entry point.

    molarkit regress --config cfg.json --out results/ [--seed N] [--workers N]

Exit codes: 0 on success, 2 for a bad config, 3 for a numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import load_config
from .exceptions import ConfigError, MolarError
from . import experiments

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_RUNNERS = {
    "regress": experiments.run_regress,
    "bandit": experiments.run_bandit,
    "recover": experiments.run_recover,
    "ingest": experiments.run_ingest,
}
# the tune subcommand reads a regress config with a "tune" block
_KIND = {"regress": "regress", "bandit": "bandit", "recover": "recover", "ingest": "ingest", "tune": "regress"}

log = logging.getLogger("molarkit")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="molarkit", description="Multitask regression and bandit experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("regress", "bandit", "recover", "ingest", "tune"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON config file")
        s.add_argument("--out", default=None, help="output directory (default: config output_dir or '.')")
        s.add_argument("--seed", type=int, default=None, help="base seed, overrides the config")
        s.add_argument("--workers", type=int, default=None, help="worker processes")
        s.add_argument("--format", choices=["csv"], default="csv")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if cfg["kind"] != _KIND[args.command]:
            raise ConfigError(f"{args.config}: kind {cfg['kind']!r} does not match subcommand {args.command!r}")
        if args.command == "tune" and "tune" not in cfg:
            raise ConfigError(f"{args.config}: tune needs a 'tune' block")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        workers = args.workers if args.workers is not None else cfg.get("workers", 1)
        if workers < 1:
            raise ConfigError("--workers must be at least 1")
        out = args.out or cfg.get("output_dir", ".")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "tune":
            chosen, _, files = experiments.tune(cfg, out, workers, args.seed)
            print(f"chosen {cfg['tune']['parameter']} = {chosen!r}")
        else:
            files = _RUNNERS[args.command](cfg, out, workers, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MolarError, FloatingPointError, ArithmeticError) as exc:
        # MolarError covers singular designs, empty inputs, malformed data
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # parameter combinations the schema cannot express, e.g. s > d
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for key, path in files.items():
        log.info("%s: %s", key, path)
    print(files["manifest"])
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
