#!/usr/bin/env python3
"""Strategy x MPR sweep, then a compact text table of reception rate and xi.

Defaults to every strategy and MPRs 0.1..1.0 with five replications per cell,
which is long on one core.  Narrow it for a quick look:

    python scripts/run_full_sweep.py --strategies DL,DLA --mprs 0.2,0.6 --replications 1
"""

import argparse
from dataclasses import replace

from caccsim.config import load_config
from caccsim.scenario import sweep


def csv_list(conv):
    return lambda s: [conv(t) for t in s.split(",") if t.strip()]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/full_sweep.ini")
    ap.add_argument("--out", default="out/sweep")
    ap.add_argument("--strategies", type=csv_list(str.upper))
    ap.add_argument("--mprs", type=csv_list(float))
    ap.add_argument("--replications", type=int)
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()

    config, spec = load_config(args.config)
    if args.replications:
        config = replace(config, replications=args.replications)
    strategies = args.strategies or spec.strategies
    mprs = args.mprs or spec.mprs
    aggs = sweep(strategies, mprs, config, args.out, args.workers)

    print(f"{'strategy':8s} {'mpr':>5s} {'trials':>8s} {'rate':>7s} {'xi_mean':>8s} {'xi_med':>8s} {'xi_var':>9s}")
    for agg in aggs:
        if agg is None:
            continue
        rate = f"{agg.reception_rate:.4f}" if agg.reception_rate is not None else "-"
        xi = agg.xi
        cols = (f"{xi.mean:8.1f} {xi.median:8.1f} {xi.var:9.0f}" if xi else f"{'-':>8s} {'-':>8s} {'-':>9s}")
        print(f"{agg.policy.value:8s} {agg.mpr:5.2f} {agg.trials:8d} {rate:>7s} {cols}")
    print(f"wrote {args.out}/summary.csv and replications.csv")


if __name__ == "__main__":
    main()
