"""Run the three modes with default plant values and compare source THD.

    python scripts/reproduce_thd.py [--out-dir out] [--t-end 0.3]
"""
import argparse
from pathlib import Path

from hapf.circuit import Mode
from hapf.runner import Scenario, compare, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, default=Path("out"))
    ap.add_argument("--t-end", type=float, default=0.3)
    args = ap.parse_args()

    summaries = {}
    for mode in Mode:
        name = mode.name.lower()
        s = Scenario(mode=mode, t_end=args.t_end, output_dir=str(args.out_dir / name))
        sm = run(s).summary
        summaries[name] = sm
        print(f"{name:13s} thd r/y/b = {sm.thd_r:.4f}/{sm.thd_y:.4f}/{sm.thd_b:.4f}  "
              f"dpf = {sm.displacement_pf:.4f}  v_dc = {sm.v_dc_mean:.1f} V  "
              f"f_sw = {sm.switching_frequency / 1e3:.1f} kHz  "
              f"ieee519 = {'pass' if sm.ieee519_pass else 'fail'}")

    print()
    print(compare(summaries["baseline"], summaries["hybrid"]).to_text(), end="")


if __name__ == "__main__":
    main()
