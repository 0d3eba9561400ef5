#!/usr/bin/env python3
"""Regenerate the packaged benchmark tables and grade the acceptance cells.

Runs every configured convergence study for the requested model families,
prints the formatted comparison tables (published reference vs computed
prices, raw and extrapolated errors, per-grid timings), and exits nonzero
if any graded cell misses its tolerance.

Examples:
    python3 scripts/reproduce_tables.py                 # all families
    python3 scripts/reproduce_tables.py bs kou          # a subset
    python3 scripts/reproduce_tables.py --jobs 4 --out-dir results/
"""

import argparse
import sys

from parisian.bench_cli import REFERENCE_TABLES, reproduce_table


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("tables", nargs="*", choices=[[], *REFERENCE_TABLES],
                        default=[], help="model families (default: all)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="grids priced concurrently within a study")
    parser.add_argument("--out-dir", default=None,
                        help="write per-study CSVs and plot data here")
    args = parser.parse_args(argv)

    names = args.tables or list(REFERENCE_TABLES)
    ok = True
    for name in names:
        report = reproduce_table(name, jobs=args.jobs, out_dir=args.out_dir)
        print(report.format())
        print()
        ok = ok and report.all_pass
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
