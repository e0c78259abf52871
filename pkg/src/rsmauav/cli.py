"""Command line: ``rsmauav gen | run | compare``.

Set ``RSMAUAV_LOG`` (DEBUG, INFO, WARNING, ...) to change how chatty it is.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .harness import DEFAULT_SEEDS, compare_baselines, run_experiment, scheme_wins, summarize
from .scenario import GenSpec, ParseError, bundled_scenario_path, generate_scenario, save_scenario
from .solver import SCHEMES, SolverError

LOG_ENV = "RSMAUAV_LOG"


def _cmd_gen(args) -> int:
    spec = GenSpec()
    if args.spec:
        with open(args.spec) as f:
            spec = GenSpec.from_json(json.load(f))
    if args.users is not None:
        spec = replace(spec, n_users=args.users)
    if args.uavs is not None:
        spec = replace(spec, uav_count=args.uavs)
    sc = generate_scenario(spec, args.seed, name=args.name)
    save_scenario(sc, args.out)
    print(f"wrote {args.out}: {len(sc.buildings)} buildings, {sc.n_users} users, {sc.uav_count} UAVs")
    return 0


def _cmd_run(args) -> int:
    overrides = {"tMax": args.tmax} if args.tmax is not None else None
    res = run_experiment(
        args.scenario,
        args.scheme,
        overrides,
        out_dir=args.out,
        seed=args.seed,
        timing=args.timing,
        figures=not args.no_figures,
    )
    print(f"{res.scheme}: min rate {res.trace[0].min_rate:.4f} -> {res.min_rate:.4f} bit/s/Hz")
    print(f"wrote {args.out}/trace.csv and {args.out}/result.json")
    return 0


def _cmd_compare(args) -> int:
    overrides = {"tMax": args.tmax} if args.tmax is not None else None
    report = compare_baselines(
        args.scenario,
        args.seeds,
        args.out,
        schemes=args.schemes,
        overrides=overrides,
        workers=args.workers,
        figures=not args.no_figures,
    )
    print(summarize(report))
    wins = scheme_wins(report)
    if wins:
        print("rsma >= rival: " + ", ".join(f"{s} {n}" for s, n in sorted(wins.items())))
    print(f"wrote {args.out}/comparison.csv")
    return 1 if report.failed() else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rsmauav", description="Multi-UAV RSMA placement, power and association optimizer")
    sub = p.add_subparsers(dest="cmd", required=True)
    default_sc = str(bundled_scenario_path())

    g = sub.add_parser("gen", help="generate a random city scenario")
    g.add_argument("--spec", help="generator recipe (JSON); defaults to the built-in recipe")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--users", type=int)
    g.add_argument("--uavs", type=int)
    g.add_argument("--name")
    g.add_argument("--out", required=True, help="scenario file to write")
    g.set_defaults(func=_cmd_gen)

    r = sub.add_parser("run", help="optimize one scenario with one scheme")
    r.add_argument("--scenario", default=default_sc)
    r.add_argument("--scheme", choices=SCHEMES, default="rsma")
    r.add_argument("--seed", type=int, help="regenerate the scenario's city with this seed")
    r.add_argument("--tmax", type=int)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--timing", action="store_true", help="record wall time per iteration (breaks byte-identical reruns)")
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="all schemes over several seeds")
    c.add_argument("--scenario", nargs="+", default=[default_sc])
    c.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    c.add_argument("--schemes", nargs="+", choices=SCHEMES, default=list(SCHEMES))
    c.add_argument("--tmax", type=int)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--no-figures", action="store_true")
    c.set_defaults(func=_cmd_compare)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, SolverError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
