"""Count critical points of theta -> D(q(theta), p) as p moves, on a curve crossing the A2 m-caustic.

The number of roots jumps where p crosses the bifurcation set, the
catastrophe picture of projection onto a curved submanifold.

    python3 scripts/projection_roots.py --out roots.png
"""
import argparse

import numpy as np

from quasihess.geodesy import Submanifold, project_onto, scan_critical_points
from quasihess.model import Box, ChartPoint, NoConvergence, lift, load_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", type=int, default=25)
    ap.add_argument("--out", help="optional PNG of the root-count map")
    args = ap.parse_args()

    chart = load_model("a2").chart()
    S = Submanifold(chart, ("t",), ("t", "0.3*t^3 - t"), Box([-2], [2]))
    xs = np.linspace(-2, 2, args.grid)
    counts = np.zeros((args.grid, args.grid), int)
    disagree = 0
    for i, a in enumerate(xs):
        for j, b in enumerate(xs):
            p = lift(ChartPoint(chart, [a, b]))
            try:
                crit = project_onto(S, p)
            except NoConvergence:
                crit = []
            counts[j, i] = len(crit)
            disagree += len(scan_critical_points(S, p)) != len(crit)
    vals, freq = np.unique(counts, return_counts=True)
    for v, f in zip(vals, freq):
        print(f"{f:5d} targets with {v} critical points")
    print(f"solver and scan disagree on {disagree} targets")
    if args.out:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 5))
        im = ax.pcolormesh(xs, xs, counts, shading="nearest", cmap="viridis")
        t = np.linspace(-2, 2, 400)
        ax.plot(t, 0.3 * t ** 3 - t, "w-", lw=1)
        ax.set_xlim(-2, 2)
        ax.set_ylim(-2, 2)
        ax.set_xlabel("x1 of p")
        ax.set_ylabel("x2 of p")
        fig.colorbar(im, label="critical points")
        fig.savefig(args.out, dpi=120)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
