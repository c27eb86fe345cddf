"""Classify the origin for exact and solved fields at several resolutions.

    python3 scripts/classify_points.py --resolutions 513 1025
"""

import argparse

from signorini_lab import exact
from signorini_lab.freeboundary import classify_point
from signorini_lab.functionals import WeissParams
from signorini_lab.grid import make_grid
from signorini_lab.solver import BoundaryData, solve_signorini

FIELDS = ("regular32", "regular32:a=0.6,nu=180deg", "qpoly2d:1")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--resolutions", type=int, nargs="+", default=[513])
    p.add_argument("--alpha", type=float, default=1.9)
    p.add_argument("--kappa0", type=float, default=3.0)
    args = p.parse_args(argv)
    params = WeissParams(2, args.alpha, kappa0=args.kappa0)
    for res in args.resolutions:
        g = make_grid(2, res)
        cases = [(name, exact.from_name(name).on(g)) for name in FIELDS]
        u, _ = solve_signorini(g, BoundaryData.from_exact(exact.regular32(), g))
        cases.append(("solved regular32", u))
        for name, f in cases:
            c = classify_point(f, (0.0, 0.0), params)
            res_fit = c.fit.residual if c.fit is not None else float("nan")
            print(f"{res:5d} {name:28s} {c.label:12s} nhat={c.nhat_limit:.4f} quality={c.quality:.2e} "
                  f"density={c.density:.4f} fit_residual={res_fit:.2e}")


if __name__ == "__main__":
    main()
