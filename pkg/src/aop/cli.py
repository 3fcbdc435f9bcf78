"""Command-line entry points: run, sweep, probe, report, regret-sweep.

Examples:

    aop run --mode mpc-3 --lifetime 2000 --seeds 0,1 --out runs
    aop run --spec runs/demo/spec.json
    aop sweep --sigma 4,8,14 --eps 10,25,40 --lifetime 4000 --out runs
    aop probe --mode td3-only --lifetime 5000 --out runs
    aop report --out figures runs/demo/seed0.jsonl runs/demo/seed1.jsonl
    aop regret-sweep --instances 100 --out regret.csv

Worker processes for multi-seed runs come from the AOP_WORKERS environment
variable.
"""

from __future__ import annotations

import argparse
import sys

from .harness import (
    ExperimentSpec,
    SpecError,
    degradation_probe,
    report,
    run,
    sweep_thresholds,
)
from .regret import lemma_sweep, write_sweep_csv


def _parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise SpecError(f"overrides: expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = value
    return out


def _spec_from_args(args) -> ExperimentSpec:
    if args.spec:
        with open(args.spec) as fh:
            spec = ExperimentSpec.from_json(fh.read())
    else:
        spec = ExperimentSpec()
    if args.name:
        spec.name = args.name
    if args.mode:
        spec.mode = args.mode
    if args.env:
        spec.env_kind = args.env
    if args.reward:
        spec.reward_mode = args.reward
    if args.schedule:
        spec.schedule_kind = args.schedule
    if args.lifetime:
        spec.lifetime = args.lifetime
    if args.period:
        spec.period = args.period
    if args.seeds:
        spec.seeds = tuple(int(s) for s in args.seeds.split(","))
    if args.out:
        spec.out_dir = args.out
    if args.checkpoints is not None:
        spec.save_checkpoints = args.checkpoints
    spec.overrides.update(_parse_overrides(args.override))
    return spec


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="path to a spec.json; flags below override it")
    p.add_argument("--name", help="run name (output subdirectory)")
    p.add_argument("--mode", help="agent mode (aop-bc|aop-td3|polo|mpc-8|mpc-3|td3-only)")
    p.add_argument("--env", help="environment kind (maze|sink-chain)")
    p.add_argument("--reward", help="reward mode (dense|sparse)")
    p.add_argument("--schedule", help="schedule kind (ns|cw)")
    p.add_argument("--lifetime", type=int, help="total env steps per seed")
    p.add_argument("--period", type=int, help="world change period")
    p.add_argument("--seeds", help="comma-separated agent seeds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--checkpoints", action="store_true", default=None,
                   help="serialize final value/policy networks next to the logs")
    p.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="agent config override, e.g. planner.pop_size=20")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="aop", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment spec across seeds")
    _add_spec_flags(p_run)

    p_sweep = sub.add_parser("sweep", help="grid over the uncertainty thresholds")
    _add_spec_flags(p_sweep)
    p_sweep.add_argument("--sigma", default="4,8,14", help="comma-separated spread thresholds")
    p_sweep.add_argument("--eps", default="10,25,40", help="comma-separated error thresholds")

    p_probe = sub.add_parser("probe", help="planner-free prior evaluation over a lifetime")
    _add_spec_flags(p_probe)
    p_probe.add_argument("--every", type=int, default=200, help="probe interval (steps)")
    p_probe.add_argument("--len", type=int, default=200, dest="probe_len",
                         help="probe rollout length")

    p_report = sub.add_parser("report", help="figure-data CSVs from JSONL logs")
    p_report.add_argument("logs", nargs="+", help="JSONL lifetime logs")
    p_report.add_argument("--out", default="figures", help="output directory")
    p_report.add_argument("--window", type=int, default=100, help="reward smoothing window")

    p_regret = sub.add_parser("regret-sweep", help="randomized bound verification sweep")
    p_regret.add_argument("--instances", type=int, default=100)
    p_regret.add_argument("--seed", type=int, default=0)
    p_regret.add_argument("--out", default="regret_sweep.csv")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            summary = run(_spec_from_args(args))
            print(f"{summary.name}: mode={summary.mode} seeds={summary.n_seeds} "
                  f"avg_reward={summary.avg_reward:.4f} +/- {summary.reward_std:.4f} "
                  f"planning_fraction={summary.planning_fraction:.4f}")
        elif args.command == "sweep":
            spec = _spec_from_args(args)
            sigma = [float(v) for v in args.sigma.split(",")]
            eps = [float(v) for v in args.eps.split(",")]
            rows = sweep_thresholds(spec, sigma, eps)
            for row in rows:
                print(f"sigma_thres={row['sigma_thres']} eps_thres={row['eps_thres']} "
                      f"avg_reward={row['avg_reward']:.4f} +/- {row['reward_std']:.4f} "
                      f"planning_fraction={row['planning_fraction']:.4f}")
        elif args.command == "probe":
            spec = _spec_from_args(args)
            rows = degradation_probe(spec, probe_every=args.every, probe_len=args.probe_len)
            for row in rows:
                print(f"t={row['t']} world={row['world_index']} score={row['score']:.4f}")
        elif args.command == "report":
            info = report(args.logs, args.out, window=args.window)
            print(f"wrote figure data for {info['n_logs']} logs to {info['out_dir']}")
        elif args.command == "regret-sweep":
            results = lemma_sweep(args.instances, args.seed)
            write_sweep_csv(results, args.out)
            holds = sum(1 for _, rep in results if rep.bound_holds)
            neg_sr = sum(1 for _, rep in results if rep.short_term < 0)
            worst = max(rep.decomposition_gap for _, rep in results)
            print(f"{len(results)} instances: bound held in {holds}, "
                  f"negative short-term regret in {neg_sr}, "
                  f"max decomposition gap {worst:.2e} -> {args.out}")
    except (SpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
