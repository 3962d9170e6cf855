"""Command-line entry point: ``hapf run | compare | spectrum``.

Exit codes: 0 success, 1 usage or configuration error, 2 solver failure,
3 IEEE-519 THD check failed under ``--assert-ieee519``.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .circuit import SolverError
from .runner import (
    ScenarioError,
    WindowMismatchError,
    compare,
    load_scenario_file,
    load_summary,
    run,
    spectrum_csv,
    with_overrides,
)

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_THRESHOLD = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hapf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate a scenario file")
    r.add_argument("scenario", type=Path)
    r.add_argument("--mode", choices=["baseline", "passive_only", "hybrid"])
    r.add_argument("--out-dir", type=Path)
    r.add_argument("--t-end", type=float)
    r.add_argument("--assert-ieee519", action="store_true",
                   help="exit 3 unless source-current THD is below the limit")

    c = sub.add_parser("compare", help="compare two summary.txt files")
    c.add_argument("summary_a", type=Path)
    c.add_argument("summary_b", type=Path)

    s = sub.add_parser("spectrum", help="harmonic spectrum of one CSV channel")
    s.add_argument("csv", type=Path)
    s.add_argument("--channel", required=True)
    s.add_argument("--f1", type=float, default=50.0)
    s.add_argument("--n-cycles", type=int, default=10)
    s.add_argument("--t-start", type=float, default=0.1)
    s.add_argument("--h-max", type=int, default=analysis.H_MAX)
    return p


def _read_channel(path: Path, channel: str) -> tuple[np.ndarray, np.ndarray]:
    with path.open() as fh:
        header = next(csv.reader(fh))
    if channel not in header:
        raise ScenarioError(f"channel {channel!r} not in {path} (have {', '.join(header)})")
    data = np.loadtxt(path, delimiter=",", skiprows=1, usecols=(0, header.index(channel)), ndmin=2)
    return data[:, 0], data[:, 1]


def _spectrum(args) -> int:
    t, x = _read_channel(args.csv, args.channel)
    dt = float(np.median(np.diff(t)))
    n0 = int(np.searchsorted(t, args.t_start - 0.5 * dt))
    n = analysis.samples_per_cycle(dt, args.f1) * args.n_cycles
    if n0 + n > len(x):
        raise ScenarioError(f"{args.csv} ends before t_start + {args.n_cycles} cycles")
    spec = analysis.dft_spectrum(x[n0:n0 + n], dt, args.f1, args.n_cycles, args.h_max)
    sys.stdout.write(spectrum_csv(spec))
    sys.stdout.write(f"# thd = {spec.thd:.6f}\n")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            s = with_overrides(load_scenario_file(args.scenario), args.mode, args.t_end, args.out_dir)
            result = run(s)
            sm = result.summary
            print(f"mode={sm.mode} thd={sm.thd:.6f} ieee519={'pass' if sm.ieee519_pass else 'fail'} "
                  f"out={s.output_dir}")
            if args.assert_ieee519 and not sm.ieee519_pass:
                return EXIT_THRESHOLD
        elif args.command == "compare":
            print(compare(load_summary(args.summary_a), load_summary(args.summary_b)).to_text(), end="")
        else:
            return _spectrum(args)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ScenarioError, WindowMismatchError, analysis.WindowMisalignmentError,
            OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
