"""Random e/m right triangles on the A2 model and their Pythagorean defects.

    python3 scripts/pythagoras_demo.py --n 20 --seed 0
"""
import argparse

import numpy as np

from quasihess.geodesy import pythagoras_check
from quasihess.model import ChartPoint, lift, load_model


def triangle(chart, u, t, s):
    # Q, R on the m-curve x2 = x1^2/2 (p-image on the line with direction (2, 1));
    # P on the e-line through Q with direction (1, -2)
    Q = lift(ChartPoint(chart, [u, u ** 2 / 2]))
    R = lift(ChartPoint(chart, [t, t ** 2 / 2]))
    P = lift(ChartPoint(chart, [s, -2 * (s - u) + u ** 2 / 2]))
    return P, Q, R


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    chart = load_model("a2").chart()
    rng = np.random.default_rng(args.seed)
    print(f"{'u':>8} {'t':>8} {'s':>8} {'D(P,R)':>12} {'D(P,Q)+D(Q,R)':>14} {'defect':>10}")
    done = 0
    while done < args.n:
        u = 0.0 if done == 0 else rng.uniform(-1.5, 1.5)
        t, s = rng.uniform(-2, 2), u + rng.uniform(-1, 1)
        if abs(-2 * (s - u) + u ** 2 / 2) > 3:
            continue
        res = pythagoras_check(*triangle(chart, u, t, s), [1, -2], [2, 1])
        print(f"{u:8.4f} {t:8.4f} {s:8.4f} {res.lhs:12.6f} {res.rhs:14.6f} {res.residual:10.2e}")
        done += 1


if __name__ == "__main__":
    main()
