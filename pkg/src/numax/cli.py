"""Command-line interface.

Subcommands:
  check-utility  print the concavity-criterion report for configured classes
  waterfill      closed-form linear-utility allocation over a beta list
  allocate       general KKT allocation with the configured class utilities
  simulate       run one scenario, emit per-window CSV
  sweep          sweep a class's user count across values and seeds
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .allocation import AllocationProblem, kkt_allocate, waterfill
from .config import ScenarioConfig, load_config
from .engine import (
    CLASS_ORDER,
    build_persub_models,
    build_report_models,
    run_scenario,
    simulate_csv,
    sweep,
    sweep_csv,
)
from .utility import criterion_check


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _load(args) -> ScenarioConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return ScenarioConfig()


def _parse_floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _cmd_check_utility(args) -> int:
    cfg = _load(args)
    classes = [args.cls] if args.cls else list(CLASS_ORDER)
    models = build_report_models(cfg)
    print("class,kind,passed,worst_x,worst_margin,lemma2_class")
    for cls in classes:
        if cls not in models:
            print(f"unknown class {cls!r}", file=sys.stderr)
            return 2
        rep = criterion_check(models[cls])
        print(
            f"{cls},{cfg.utility_kind[cls]},{str(rep.passed).lower()},"
            f"{_fmt(rep.worst_x)},{_fmt(rep.worst_margin)},{rep.lemma2_class.value}"
        )
    return 0


def _cmd_waterfill(args) -> int:
    betas = _parse_floats(args.beta)
    res = waterfill(betas, args.budget)
    print("subcarrier,beta,power,nu,objective")
    for k, (b, p) in enumerate(zip(betas, res.powers)):
        print(f"{k},{_fmt(b)},{_fmt(p)},{_fmt(res.nu)},{_fmt(res.objective)}")
    return 0


def _cmd_allocate(args) -> int:
    cfg = _load(args)
    betas = _parse_floats(args.beta)
    if args.classes:
        classes = [c.strip() for c in args.classes.split(",")]
    else:
        classes = ["be"] * len(betas)
    if len(classes) != len(betas):
        print("--classes must match --beta in length", file=sys.stderr)
        return 2
    n_users = sum(cfg.class_users().values())
    models = build_persub_models(cfg, n_users)
    try:
        utilities = [models[c] for c in classes]
    except KeyError as exc:
        print(f"unknown class {exc}", file=sys.stderr)
        return 2
    problem = AllocationProblem(betas=betas, utilities=utilities, budget=args.budget)
    res = kkt_allocate(problem)
    print("subcarrier,class,beta,power,nu,objective")
    for k, (c, b, p) in enumerate(zip(classes, betas, res.powers)):
        print(
            f"{k},{c},{_fmt(b)},{_fmt(p)},{_fmt(res.nu)},{_fmt(res.objective)}"
        )
    return 0


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    text = simulate_csv(run_scenario(cfg))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    values = [int(float(v)) for v in args.values.split(",") if v.strip()]
    rows = sweep(cfg, args.param, values, n_seeds=args.seeds)
    text = sweep_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="numax",
        description="Utility-criterion checks, power allocation, and FDMA scheduling simulation",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-utility", help="criterion report for configured utilities")
    p.add_argument("--config", help="scenario config file")
    p.add_argument("--class", dest="cls", help="restrict to one class (voip, video, be)")
    p.set_defaults(func=_cmd_check_utility)

    p = sub.add_parser("waterfill", help="exact waterfilling for linear utilities")
    p.add_argument("--beta", required=True, help="comma-separated channel coefficients")
    p.add_argument("--budget", type=float, default=1.0)
    p.set_defaults(func=_cmd_waterfill)

    p = sub.add_parser("allocate", help="KKT allocation with configured utilities")
    p.add_argument("--config", help="scenario config file")
    p.add_argument("--beta", required=True, help="comma-separated channel coefficients")
    p.add_argument("--budget", type=float, default=1.0)
    p.add_argument(
        "--classes",
        help="comma-separated class per subcarrier (default: all best effort)",
    )
    p.set_defaults(func=_cmd_allocate)

    p = sub.add_parser("simulate", help="run one scenario and emit per-window CSV")
    p.add_argument("--config", help="scenario config file")
    p.add_argument("--seed", type=int, help="override sim.seed")
    p.add_argument("--out", help="output CSV path (default stdout)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="sweep a user-count parameter")
    p.add_argument("--config", help="scenario config file")
    p.add_argument("--param", required=True, help="e.g. traffic.voip.users")
    p.add_argument("--values", required=True, help="comma-separated integer values")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", help="output CSV path (default stdout)")
    p.set_defaults(func=_cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
