#!/usr/bin/env python3
"""Single full-horizon DL replication at 40 % CACC, timed.

    python scripts/run_desk_scenario.py [--config configs/dl_desk.ini] [--out out/desk]
"""

import argparse
import time
from pathlib import Path

from caccsim.config import load_config
from caccsim.scenario import aggregate, run_replication, write_replications, write_summary

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=ROOT / "configs" / "dl_desk.ini")
    ap.add_argument("--out", default="out/desk")
    args = ap.parse_args()

    config, _ = load_config(args.config)
    out = Path(args.out)
    t0 = time.perf_counter()
    res = run_replication(config, 0, out)
    elapsed = time.perf_counter() - t0
    if not res.ok:
        raise SystemExit(f"replication failed: {res.error}")
    write_summary(out / "summary.csv", [aggregate([res])])
    write_replications(out / "replications.csv", [res])

    xi = res.xi
    print(f"{config.policy.value} mpr={config.mpr:.2f} seed={res.seed} runtime={elapsed:.1f}s")
    print(f"  trials={res.trials} reception_rate={res.reception_rate:.4f}")
    print(f"  xi mean={xi.mean:.1f} median={xi.median:.1f} var={xi.var:.0f}")
    print(f"  fallbacks: packet_drop={res.fallback_packet_drop} infeasible={res.fallback_infeasible}")
    print(f"  throughput={res.throughput_vph:.0f} vph, on network at end={res.on_network}, queued={res.queued}")


if __name__ == "__main__":
    main()
