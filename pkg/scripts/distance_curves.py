#!/usr/bin/env python3
"""Reception probability against distance for three channel loads.

Writes the CSV and, with matplotlib installed, a PNG next to it.
"""

import argparse
from pathlib import Path

from caccsim.dsrc import DEFAULT_TABLE, CurveSpec, curve_rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out/curves.csv")
    ap.add_argument("--xi", default="500,1500,3000")
    args = ap.parse_args()

    spec = CurveSpec([float(t) for t in args.xi.split(",")], phi=300.0, xmax=300.0, dx=1.0)
    rows = curve_rows(DEFAULT_TABLE, spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        fh.write("x_m,xi,p_r\n")
        fh.writelines(f"{x!r},{xi!r},{p!r}\n" for x, xi, p in rows)
    print(f"wrote {len(rows)} rows to {out}")

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for xi in spec.xis:
        pts = [(x, p) for x, x_i, p in rows if x_i == xi]
        ax.plot(*zip(*pts), label=f"xi = {xi:g}")
    ax.set_xlabel("distance (m)")
    ax.set_ylabel("reception probability")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out.with_suffix(".png"), dpi=120)


if __name__ == "__main__":
    main()
