#!/usr/bin/env python3
"""Track how the model-free component fares on its own over a lifetime.

Every N steps the current prior is evaluated with the planner switched off,
from the lifetime's fixed starting state, inside a frozen snapshot of the
current world. Run it once for a planner-coupled agent (aop-bc / aop-td3) and
once for td3-only on the same schedule to compare stability as worlds change.
"""

import argparse

from aop.harness import ExperimentSpec, degradation_probe


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mode", default="td3-only", choices=("aop-bc", "aop-td3", "td3-only"))
    ap.add_argument("--lifetime", type=int, default=10_000)
    ap.add_argument("--period", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--schedule-seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=250)
    ap.add_argument("--len", type=int, default=200, dest="probe_len")
    ap.add_argument("--out", default="runs/degradation")
    args = ap.parse_args()

    spec = ExperimentSpec(
        name=f"probe-{args.mode}",
        mode=args.mode,
        schedule_kind="cw",
        schedule_seed=args.schedule_seed,
        lifetime=args.lifetime,
        period=args.period,
        n_periods=max(2, args.lifetime // args.period),
        seeds=(args.seed,),
        out_dir=args.out,
    )
    rows = degradation_probe(spec, probe_every=args.every, probe_len=args.probe_len)
    for r in rows:
        print(f"t={r['t']:>6} world={r['world_index']:>2} score={r['score']:>8.4f}")


if __name__ == "__main__":
    main()
