"""Command line entry point: ``rtbq {gen,train,eval,sweep,baseline}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (DEFAULT_LAMBDAS, GeneratorSpec, Scenario, TrainConfig, evaluate, evaluate_weeks,
                      generate_scenario, sweep_seeds, train, write_curve, write_report, write_sweep)
from .qlearning import QTable

DEFAULT_EPISODES = 40
DEFAULT_TEST_WEEKS = 4


def _lambdas(text: str) -> list:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad lambda list {text!r}") from exc
    if not values or any(not 0.0 <= v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError("lambdas must be a non-empty comma list of values in [0, 1]")
    return values


def _seeds(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("lambda must be in [0, 1]")
    return v


def _scenario(args) -> Scenario:
    if getattr(args, "scenario", None):
        return Scenario.load(args.scenario)
    return generate_scenario(GeneratorSpec.for_scale(args.scale), args.seed)


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    sc = generate_scenario(GeneratorSpec.for_scale(args.scale), args.seed)
    path = _out(args) / f"scenario_{args.scale}_s{args.seed}.json"
    sc.save(path)
    print(path)
    return 0


def cmd_train(args) -> int:
    sc = _scenario(args)
    table = train(sc, args.lam, args.episodes, TrainConfig())
    path = _out(args) / f"qtable_l{args.lam:g}_s{sc.seed}.csv"
    table.save(path)
    print(path)
    return 0


def cmd_eval(args) -> int:
    sc = _scenario(args)
    table = QTable.load(args.table)
    report = evaluate_weeks(sc, table, args.test_weeks, lam=args.lam)
    path = _out(args) / f"report_s{sc.seed}.csv"
    write_report(path, report)
    _print_deltas(report)
    print(path)
    return 0


def cmd_baseline(args) -> int:
    sc = _scenario(args)
    report, _, _ = evaluate(sc, "baseline", test_stream=args.test_stream)
    path = _out(args) / f"baseline_s{sc.seed}.csv"
    write_report(path, report)
    print(", ".join(f"{k}={v:.6g}" for k, v in report.baseline.items()))
    print(path)
    return 0


def cmd_sweep(args) -> int:
    seeds = args.seeds if args.seeds is not None else [args.seed]
    reports = sweep_seeds(seeds, args.lambdas, args.episodes, GeneratorSpec.for_scale(args.scale),
                          TrainConfig(), jobs=args.jobs, test_weeks=args.test_weeks)
    out = _out(args)
    write_sweep(out / "sweep.csv", reports)
    write_curve(out / "curve.csv", reports)
    for r in reports:
        _print_deltas(r)
    print(out / "sweep.csv")
    print(out / "curve.csv")
    return 0


def _print_deltas(report) -> None:
    d = report.deltas
    print(f"lambda={report.lam} seed={report.seed} "
          f"dhappy%={d['happy']:.2f} dmargin%={d['margin']:.2f} dspend%={d['spend']:.2f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtbq", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_in=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--scale", choices=("desk", "paper"), default="desk")
        sp.add_argument("--out-dir", default="out")
        if scenario_in:
            sp.add_argument("--scenario", help="scenario JSON; generated from --seed/--scale when omitted")

    sp = sub.add_parser("gen", help="write a scenario file")
    common(sp, scenario_in=False)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train a Q-table on a scenario")
    common(sp)
    sp.add_argument("--lambda", dest="lam", type=_unit, default=0.5)
    sp.add_argument("--episodes", type=int, default=DEFAULT_EPISODES)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a Q-table against the PI baseline")
    common(sp)
    sp.add_argument("--table", required=True)
    sp.add_argument("--lambda", dest="lam", type=_unit, default=None)
    sp.add_argument("--test-weeks", type=int, default=DEFAULT_TEST_WEEKS)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="train and evaluate over a lambda grid")
    common(sp, scenario_in=False)
    sp.add_argument("--lambda", dest="lambdas", type=_lambdas, default=list(DEFAULT_LAMBDAS),
                    help="comma separated lambda values")
    sp.add_argument("--seeds", type=_seeds, default=None, help="comma separated seeds; overrides --seed")
    sp.add_argument("--episodes", type=int, default=DEFAULT_EPISODES)
    sp.add_argument("--test-weeks", type=int, default=DEFAULT_TEST_WEEKS)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("baseline", help="run the PI controller alone")
    common(sp)
    sp.add_argument("--test-stream", type=int, default=0)
    sp.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "episodes", 1) < 1 or getattr(args, "test_weeks", 1) < 1:
        print("rtbq: --episodes and --test-weeks must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"rtbq: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
