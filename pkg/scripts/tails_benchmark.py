"""Exact tail vs lattice Bahadur-Rao vs tilted Monte Carlo on the two-state benchmark.

    python3 scripts/tails_benchmark.py [--reps 100000] [--seed 2024] [--out tails.csv]
"""

import argparse
import time

import numpy as np

from markov_ldp.io import write_csv
from markov_ldp.ldp import bahadur_rao_lattice, exact_tail_dp, solve_rate_point
from markov_ldp.models import two_state
from markov_ldp.simulate import tail_estimate_tilted


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=float, default=0.1)
    ap.add_argument("--q", type=float, default=0.2)
    ap.add_argument("--c", type=float, default=0.7)
    ap.add_argument("--x", type=int, default=1)
    ap.add_argument("--n", type=int, nargs="+", default=[50, 100, 200, 400])
    ap.add_argument("--reps", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    P = two_state(args.p, args.q)
    F = np.array([0.0, 1.0])
    rp = solve_rate_point(P, F, args.c)
    print(f"c = {args.c}: a = {rp.a:.12g}, J = {rp.J:.12g}, sigma2 = {rp.sigma2:.12g}")
    rows = []
    print(f"{'n':>5} {'exact':>14} {'bahadur-rao':>14} {'ratio':>8} {'tilted':>14} {'z':>7} {'sec':>6}")
    for n in args.n:
        t0 = time.perf_counter()
        exact = exact_tail_dp(P, F, args.x, args.c, n)
        br = bahadur_rao_lattice(P, F, args.x, args.c, n).predicted
        est = tail_estimate_tilted(P, F, args.x, args.c, n, args.reps, args.seed, a=rp.a, threads=args.threads)
        z = (est.value - exact) / est.std_error
        dt = time.perf_counter() - t0
        print(f"{n:5d} {exact:14.6e} {br:14.6e} {br / exact:8.4f} {est.value:14.6e} {z:7.2f} {dt:6.1f}")
        rows.append([n, exact, br, br / exact, est.value, est.std_error, z])
    if args.out:
        write_csv(args.out, ["n", "exact", "bahadur_rao", "ratio", "tilted", "std_error", "z"], rows)


if __name__ == "__main__":
    main()
