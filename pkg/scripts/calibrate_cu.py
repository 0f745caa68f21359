"""Calibrate the initial-scale constant C_u from filled impurity configurations.

Usage: python3 scripts/calibrate_cu.py [--d 1] [--L 32] [--sweep 2 3 4 6 8]
"""

import argparse
import json

from msalab.msa import calibrate_Cu


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=1)
    ap.add_argument("--L", type=float, default=32.0)
    ap.add_argument("--sweep", type=float, nargs="+", default=[2, 3, 4, 6, 8])
    args = ap.parse_args()
    cal = calibrate_Cu(args.d, delta0_sweep=tuple(args.sweep), L=args.L)
    print(json.dumps(cal.to_dict(), indent=2))


if __name__ == "__main__":
    main()
