"""Time-domain impedance sweep of the passive branches, written as CSV.

Each point drives a branch with a sinusoid, lets it settle and fits the
current phasor, so the result includes the discretization of the solver.

    python scripts/branch_sweep.py [--f-min 50] [--f-max 2500] [--points 200] > sweep.csv
"""
import argparse
import math
import sys

import numpy as np

from hapf.circuit import CircuitParams, branch_impedance


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--f-min", type=float, default=50.0)
    ap.add_argument("--f-max", type=float, default=2500.0)
    ap.add_argument("--points", type=int, default=200)
    ap.add_argument("--dt", type=float, default=1e-5)
    args = ap.parse_args()

    p = CircuitParams()
    branches = (("fifth", "series", p.fifth), ("seventh", "series", p.seventh),
                ("high_pass", "hp", p.high_pass))
    out = sys.stdout
    out.write("frequency_Hz," + ",".join(f"{n}_mag_ohm,{n}_phase_deg" for n, _, _ in branches) + "\n")
    for f in np.geomspace(args.f_min, args.f_max, args.points):
        row = [f"{f:.6g}"]
        for _, kind, b in branches:
            z = branch_impedance(kind, b, f, dt=args.dt, settle=0.5)
            row += [f"{abs(z):.6g}", f"{math.degrees(np.angle(z)):.4f}"]
        out.write(",".join(row) + "\n")

    for name, kind, b in branches[:2]:
        print(f"# {name}: tuned at {b.tuned_frequency():.2f} Hz, |Z| there "
              f"{abs(branch_impedance(kind, b, b.tuned_frequency(), dt=args.dt, settle=0.5)):.4f} ohm "
              f"(R = {b.R})", file=sys.stderr)


if __name__ == "__main__":
    main()
