"""Command-line entry point: ``mlp01 <command> [--config FILE] [flags]``."""
from __future__ import annotations

import argparse
import logging
import sys

from ..data import ConfigError, DataError
from ..serialize import ModelFileError
from .config import load_config
from .experiments import COMMANDS, verify


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlp01", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "verify"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI recipe file")
        sp.add_argument("--out", help="output directory (overrides experiment.out)")
        if name != "verify":
            sp.add_argument("--seed", type=int)
            sp.add_argument("--scale", type=float, help="fraction of data size, votes and epochs, in (0, 1]")
            sp.add_argument("--workers", type=int)
            sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                            help="override any recipe value; repeatable")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        overrides = {}
        for item in getattr(args, "set", []):
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
            overrides[key.strip()] = value
        for flag in ("out", "seed", "scale", "workers"):
            if getattr(args, flag, None) is not None:
                overrides[f"experiment.{flag}"] = str(getattr(args, flag))
        cfg = load_config(args.config, overrides)
        if args.command == "verify":
            problems = verify(cfg.out)
            for line in problems:
                print(f"FAIL {line}")
            if not problems:
                print(f"OK {cfg.out}: all artifacts match their run records")
            return 1 if problems else 0
        cfg.set("experiment.kind", args.command)
        cfg.validate()
        record = COMMANDS[args.command](cfg)
    except (ConfigError, DataError, ModelFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    n = len(record["artifacts"])
    print(f"{args.command}: wrote {n} artifact{'s' * (n != 1)} to {cfg.out} "
          f"(digest {record['config_digest']}, {record['wall_clock_s']:.1f}s)")
    return 0
