"""Plot the e/m-wavefront of a bundled model together with its caustic.

    python3 scripts/plot_wavefront.py --model a2 --side m --out a2_m.png
"""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from quasihess.frontsampler import extract_caustics, sample_wavefront  # noqa: E402
from quasihess.model import load_model  # noqa: E402


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", default="a2")
    ap.add_argument("--chart")
    ap.add_argument("--side", choices=("e", "m"), default="m")
    ap.add_argument("--grid", type=int, default=81)
    ap.add_argument("--out", default="wavefront.png")
    args = ap.parse_args()

    chart = load_model(args.model).chart(args.chart)
    if chart.n != 2:
        raise SystemExit("plotting needs a 2-dimensional model")
    w = sample_wavefront(chart, args.side, args.grid)
    c = extract_caustics(chart, args.side, 2 * args.grid + 1)
    base = "x" if args.side == "e" else "p"

    fig = plt.figure(figsize=(11, 5))
    ax = fig.add_subplot(1, 2, 1, projection="3d")
    for b, colour in ((1, "tab:blue"), (-1, "tab:orange"), (0, "k")):
        sel = w.branch == b
        if sel.any():
            ax.scatter(*w.coords[sel].T, s=1, c=colour)
    ax.set_xlabel(f"{base}1")
    ax.set_ylabel(f"{base}2")
    ax.set_zlabel("z" if args.side == "e" else "z'")
    ax.set_title(f"{args.side}-wavefront of {args.model}")

    ax = fig.add_subplot(1, 2, 2)
    ax.scatter(*w.coords[:, :2].T, s=1, c=w.branch, cmap="coolwarm", alpha=0.3)
    for pl in c.polylines:
        ax.plot(*pl.T, "k-", lw=2)
    ax.set_xlabel(f"{base}1")
    ax.set_ylabel(f"{base}2")
    ax.set_title(f"{args.side}-caustic ({len(c.polylines)} polylines)")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
