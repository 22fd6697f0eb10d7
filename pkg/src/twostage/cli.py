"""Command line: ``twostage simulate``, ``twostage experiment KIND`` and ``twostage rerun``.

Exit codes: 0 success, 1 acceptance failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys

from .experiments import (KINDS, ConfigError, ExperimentConfig, load_json, rerun_manifest,
                          run_experiment)
from .game_core import InvalidInputError


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"1,2,5"`` or a half-open range ``"0:100"``."""
    try:
        if ":" in text:
            lo, hi = text.split(":")
            seeds = tuple(range(int(lo), int(hi)))
        else:
            seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _overrides(p: argparse.ArgumentParser):
    p.add_argument("--gamma", type=float, help="window exponent override")
    p.add_argument("--penalty-exponent", type=float, help="penalty growth exponent override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twostage", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one simulation and write its ledger CSV")
    sim.add_argument("--config", required=True, help="game or simulation JSON")
    sim.add_argument("--days", type=int, help="horizon L")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default=".", help="output directory")
    _overrides(sim)

    exp = sub.add_parser("experiment", help="run an experiment and write CSV + manifest")
    exp.add_argument("kind", choices=KINDS)
    exp.add_argument("--config", help="JSON with experiment parameters")
    exp.add_argument("--seeds", type=parse_seeds, help="e.g. 1,2,3 or 0:100")
    exp.add_argument("--out", default=".", help="output directory")
    exp.add_argument("--workers", type=int, default=1, help="process pool size")
    _overrides(exp)

    again = sub.add_parser("rerun", help="repeat a run from its manifest")
    again.add_argument("--manifest", required=True)
    again.add_argument("--out", required=True, help="output directory")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    params, seeds = {}, None
    if args.command == "simulate":
        params = {"config": load_json(args.config)}
        if args.days is not None:
            params["days"] = args.days
        seeds = (args.seed,)
    else:
        if args.config:
            doc = load_json(args.config)
            params = dict(doc.get("parameters", doc))
            params.pop("seeds", None)
            seeds = doc.get("seeds")
            if args.kind == "simulate" and "config" not in params:
                params = {"config": doc}
        if args.seeds is not None:
            seeds = args.seeds
    for key in ("gamma", "penalty_exponent"):
        val = getattr(args, key)
        if val is not None:
            params[key] = val
    kind = "simulate" if args.command == "simulate" else args.kind
    return ExperimentConfig(kind, params, tuple(seeds) if seeds else (0,), args.out,
                            getattr(args, "workers", 1))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items()}
    try:
        if args.command == "rerun":
            return rerun_manifest(args.manifest, args.out)
        cfg = _experiment_config(args)
        return run_experiment(cfg, flags=flags)
    except (ConfigError, InvalidInputError) as e:
        print(f"twostage: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
