"""Audit standard coverings: which properties hold at a given containment reach.

Usage: python3 scripts/covering_audit.py [--reach 2/5] [--dims 1 2] [--rmin 8] [--rmax 40]
"""

import argparse
from fractions import Fraction

from msalab.covering import admissible_alphas, axis_containment_gaps, standard_covering, verify_plan
from msalab.point_process import Box


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reach", type=Fraction, default=Fraction(2, 5))
    ap.add_argument("--dims", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--rmin", type=int, default=8)
    ap.add_argument("--rmax", type=int, default=40)
    args = ap.parse_args()
    print("d,L,alpha,coverage,containment,core_disjoint,cardinality,first_gap")
    for d in args.dims:
        for r in range(args.rmin, args.rmax + 1):
            if not admissible_alphas(r, 1):
                print(f"{d},{r},incompatible,,,,,")
                continue
            plan = standard_covering(Box.cube(float(r), d), 1.0)
            rep = verify_plan(plan, reach=args.reach)
            gaps = axis_containment_gaps(plan, args.reach)
            gap = f"[{float(gaps[0][0]):.4f};{float(gaps[0][1]):.4f}]" if gaps else ""
            print(f"{d},{r},{plan.alpha},{rep.coverage},{rep.containment},{rep.core_disjoint},"
                  f"{rep.cardinality},{gap}")


if __name__ == "__main__":
    main()
