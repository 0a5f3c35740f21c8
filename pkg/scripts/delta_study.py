"""Distance between the thick solution with a small conductor capacity and the limit solution.

    python3 scripts/delta_study.py --deltas 0.1 0.03 0.01 0.003 0.001
"""
import argparse

import numpy as np

from pseudopar.checks import thick_delta_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.1, 0.03, 0.01, 0.003, 0.001])
    args = ap.parse_args()

    rows = thick_delta_rows(args.n, tuple(args.deltas))
    print("delta     distance      energy ratio")
    for r in rows:
        print(f"{r.delta:<9g} {r.distance:.6e}  {r.energy_lhs / r.energy_rhs:.4f}")
    d = np.array([r.delta for r in rows])
    dist = np.array([r.distance for r in rows])
    print(f"\nfitted rate in delta {np.polyfit(np.log(d), np.log(dist), 1)[0]:.3f}")


if __name__ == "__main__":
    main()
