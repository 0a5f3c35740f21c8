"""Thick membrane of width eta with capacity alpha/eta against the thin-interface solution.

    python3 scripts/concentration_study.py --n 32 --ks 4 2 1
"""
import argparse

import numpy as np

from pseudopar.checks import concentration_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--ks", type=int, nargs="+", default=[4, 2, 1])
    ap.add_argument("--dt", type=float, default=0.01)
    ap.add_argument("--T", type=float, default=0.2)
    args = ap.parse_args()

    rows = concentration_rows(args.n, tuple(args.ks), args.dt, args.T)
    print("eta       t       discrepancy")
    for r in rows:
        print(f"{r.eta:<9g} {r.t:<7g} {r.discrepancy:.6e}")
    last = max(r.t for r in rows)
    eta = np.array([r.eta for r in rows if r.t == last])
    disc = np.array([r.discrepancy for r in rows if r.t == last])
    print(f"\nfitted order in eta at t={last:g}: {np.polyfit(np.log(eta), np.log(disc), 1)[0]:.3f}")


if __name__ == "__main__":
    main()
