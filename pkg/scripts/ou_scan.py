"""Drift certificates for the truncated Gaussian AR(1) chain over a (delta, sigma) grid.

    python3 scripts/ou_scan.py [--delta 0.1 0.5 1] [--sigma 0.5 1 2] [--points 201]
"""

import argparse
import math

import numpy as np

from markov_ldp.models import ou_grid
from markov_ldp.spectral import max_regularity_eta, taboo_exp_functional


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--delta", type=float, nargs="+", default=[0.1, 0.5, 1.0])
    ap.add_argument("--sigma", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    ap.add_argument("--points", type=int, default=201)
    args = ap.parse_args()

    hdr = f"{'delta':>6} {'sigma':>6} {'grid':>12} {'loss':>9} {'eps0':>8} {'|C|':>4} {'delta_hat':>10} {'c':>9}"
    print(hdr)
    for d in args.delta:
        for s in args.sigma:
            m = ou_grid(d, s)
            eta_max = max_regularity_eta(m.P, m.W, m.C)
            eta = 0.5 * eta_max if math.isfinite(eta_max) else 1.0
            U = taboo_exp_functional(m.P, m.W, m.C, eta).U
            c = float(np.max(np.log(U) - m.V))
            grid = f"[{m.grid.lo:g},{m.grid.hi:g}]"
            print(f"{d:6g} {s:6g} {grid:>12} {m.mass_loss:9.2e} {m.eps0:8.5f} {len(m.C):4d} "
                  f"{m.certificate.delta:10.4g} {c:9.4f}")


if __name__ == "__main__":
    main()
