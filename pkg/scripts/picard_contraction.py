"""Picard sweep increments per window, thin problem and thick problem for several delta.

The thick map has a Lipschitz constant of about sigma/delta, so the window is
taken as delta/(2 sigma), rounded down to a multiple of dt, unless --window is given.

    python3 scripts/picard_contraction.py --deltas 0.1 0.05 0.02
"""
import argparse

from pseudopar.checks import ONE_BOX, log_fit, thick_solver, thin_solver


def show(label, windows):
    for w in windows:
        inc = " ".join(f"{x:.1e}" for x in w.increments)
        line = f"{label} [{w.t_start:.3f}, {w.t_end:.3f}] sweeps={w.sweeps} halvings={w.halvings}"
        if len(w.increments) >= 3:
            r2, rate = log_fit(w.increments)
            line += f" R2={r2:.4f} rate={rate:.3f}"
        print(line)
        print("    " + inc)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.1, 0.05])
    ap.add_argument("--window", type=float, default=None)
    ap.add_argument("--dt", type=float, default=0.01)
    ap.add_argument("--T", type=float, default=0.2)
    args = ap.parse_args()

    s = thin_solver(args.n, ONE_BOX, 0.05, 0.5, scheme="picard", window=0.1)
    show("thin", s.run().windows)
    for delta in args.deltas:
        # largest multiple of dt not above delta/2
        window = args.window or args.dt * max(1, int(delta / 2 / args.dt + 1e-9))
        t = thick_solver(args.n, ONE_BOX, 1, args.dt, args.T, scheme="picard", window=window,
                         delta=delta)
        show(f"thick delta={delta:g}", t.run().windows)


if __name__ == "__main__":
    main()
