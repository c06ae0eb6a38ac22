"""Command-line entry point: ``lipclt <stage> --config PATH [--seed N] [--out DIR] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load
from .errors import LipCLTError
from .pipeline import run_experiment

SUBCOMMANDS = {
    "diagnose": ["diagnose"],
    "simulate": ["simulate"],
    "variance": ["variance"],
    "spectral": ["spectral"],
    "clt": ["clt"],
    "run": None,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lipclt", description="Variance, spectral and CLT checks for random Lipschitz iterations")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name, help=f"run the {name} stage" if name != "run" else "run the full pipeline")
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="JSON experiment config")
        src.add_argument("--preset", help="named preset model with default settings")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--out", default="lipclt-out", help="output directory (default: lipclt-out)")
        s.add_argument("--threads", type=int, help="worker threads (default: $LIPCLT_THREADS or 1)")
        s.add_argument("--paths", type=int, help="override simulation/variance/harness path counts")
        s.add_argument("--horizon", type=int, help="override simulation.horizon")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = load(args.config) if args.config else {"model": {"preset": args.preset}}
        overrides = {}
        if args.paths is not None:
            for key in ("simulation.paths", "variance.paths", "harness.paths"):
                overrides[key] = args.paths
        if args.horizon is not None:
            overrides["simulation.horizon"] = args.horizon
        result = run_experiment(raw, args.out, seed=args.seed, threads=args.threads,
                                stages=SUBCOMMANDS[args.command], overrides=overrides)
    except LipCLTError as err:
        print(f"lipclt: error: {err}", file=sys.stderr)
        return err.exit_code
    print(json.dumps({"out": args.out, "files": result["manifest"]["files"]}))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
