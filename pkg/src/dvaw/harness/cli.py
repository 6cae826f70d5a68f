"""Command-line entry point: ``dvaw {simulate,run,verify,cover}``.

Exit codes: 0 success, 1 a bound or integrity check failed, 2 invalid
input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from ..errors import ParameterError, SchemaError
from ..tuner import geometric_cover, partition_interval
from .experiment import load_config, run_experiment, simulate, verify
from .io import FORMAT_VERSION

DEFAULT_OUT = "dvaw_out"


def _default_out() -> str:
    return os.environ.get("DVAW_OUT", DEFAULT_OUT)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dvaw", description="Discounted VAW experiments and bound checks")
    sub = parser.add_subparsers(dest="verb", required=True)

    for verb, help_text in (("simulate", "write the stream and comparator only"), ("run", "run a full experiment")):
        p = sub.add_parser(verb, help=help_text)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int, help="override the seed in the config")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: $DVAW_OUT or ./dvaw_out)")
        if verb == "run":
            p.add_argument("--check", choices=("on", "off"), default="on")

    p = sub.add_parser("verify", help="recheck a run directory offline")
    p.add_argument("dir", nargs="?", type=Path)
    p.add_argument("--out", type=Path, default=None, help="run directory (alternative to the positional argument)")

    p = sub.add_parser("cover", help="print the dyadic cover, or the partition of [s, tau]")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--s", type=int)
    p.add_argument("--tau", type=int)
    return parser


def _intervals(items) -> list:
    return [{"level": iv.level, "k": iv.k, "start": iv.start, "end": iv.end} for iv in items]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb in ("simulate", "run"):
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = cfg.with_seed(args.seed)
            out = args.out or Path(_default_out())
            if args.verb == "simulate":
                simulate(cfg, out)
                print(f"wrote stream to {out}")
                return 0
            result = run_experiment(cfg, out, check=args.check == "on")
            failed = [r for r in result.reports if not r["passed"]]
            print(f"{len(result.reports)} checks, {len(failed)} failed, {len(result.problems)} integrity problems; output in {out}")
            for msg in result.problems:
                print(f"  problem: {msg}", file=sys.stderr)
            return result.exit_code
        if args.verb == "verify":
            target = args.dir or args.out or Path(_default_out())
            res = verify(target)
            for r in res.reports:
                mark = "PASS" if r["passed"] else "FAIL"
                print(f"{mark} {r['check']} {r['learner_id']} {json.dumps(r['context'])} lhs={r['lhs']:.6g} rhs={r['rhs']:.6g}")
            for msg in res.problems:
                print(f"problem: {msg}")
            return 0 if res.ok else 1
        if args.s is None and args.tau is None:
            payload = {"format_version": FORMAT_VERSION, "T": args.T, "intervals": _intervals(geometric_cover(args.T))}
        else:
            if args.s is None or args.tau is None:
                raise ParameterError("--s and --tau must be given together")
            pieces = partition_interval(args.s, args.tau, args.T)
            payload = {"format_version": FORMAT_VERSION, "T": args.T, "s": args.s, "tau": args.tau, "partition": _intervals(pieces)}
        print(json.dumps(payload, indent=2))
        return 0
    except (ParameterError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
