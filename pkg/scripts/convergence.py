"""Manufactured-solution convergence of the P1 solver and of the thin scheme in time.

    python3 scripts/convergence.py --ns 8 16 32 64
"""
import argparse

import numpy as np

from pseudopar.checks import manufactured_errors, thin_scheme_gaps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ns", type=int, nargs="+", default=[8, 16, 32, 64])
    ap.add_argument("--dts", type=float, nargs="+", default=[0.1, 0.05, 0.025, 0.0125])
    args = ap.parse_args()

    errs = manufactured_errors(tuple(args.ns))
    print("n      L2 error      ratio")
    for i, (n, e) in enumerate(zip(args.ns, errs)):
        ratio = errs[i - 1] / e if i else float("nan")
        print(f"{n:<6d} {e:.6e}  {ratio:.3f}")

    gaps = thin_scheme_gaps(dts=tuple(args.dts))
    print("\ndt       marching-vs-Picard gap   ratio")
    for i, (dt, g) in enumerate(zip(args.dts, gaps)):
        ratio = gaps[i - 1] / g if i else float("nan")
        print(f"{dt:<8g} {g:.6e}             {ratio:.3f}")
    print(f"\nobserved spatial order {np.polyfit(np.log(args.ns), np.log(errs), 1)[0]:+.3f}")


if __name__ == "__main__":
    main()
