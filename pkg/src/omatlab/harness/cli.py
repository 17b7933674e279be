"""Command line entry point: ``omatlab <subcommand> [--config PATH] [--out DIR] ...``.

Exit codes: 0 ok, 1 any other failure (for example an exhausted harvest
budget), 2 configuration error, 3 upstream artifact missing or mismatched,
4 numerical failure (non-finite loss or gradient).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config
from .study import STAGES, Study, UpstreamError, run_through

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_UPSTREAM, EXIT_NUMERIC = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="omatlab", description="Latent-noise attacks and on-manifold adversarial training on a toy diffusion stack.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in STAGES:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, default=None, help="sectioned key=value file (defaults apply when omitted)")
        s.add_argument("--out", type=Path, default=None, help="output directory (env OMAT_OUT overrides)")
        s.add_argument("--seed", type=int, default=None, help="master seed, overrides [study] seed")
        s.add_argument("--threads", type=int, default=None, help="worker processes for per-seed attack work")
        s.add_argument("--stage", choices=STAGES, default=None, help="first run every stage from STAGE up to this one")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            cfg = replace(cfg, study=replace(cfg.study, threads=args.threads))
        out = os.environ.get("OMAT_OUT") or args.out or Path("runs") / f"seed{cfg.master_seed}"
        study = Study(cfg, Path(out), log=lambda msg: None)
        summaries = run_through(study, args.command, args.stage)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except UpstreamError as e:
        print(f"upstream error: {e}", file=sys.stderr)
        return EXIT_UPSTREAM
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, RuntimeError) as e:
        if args.stage is not None and "comes after" in str(e):
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"{args.command} failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"{args.command}: {summaries[-1]}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
