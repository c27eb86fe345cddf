"""Grid refinement study for the Signorini solve with an exact boundary trace.

Writes one CSV row per resolution: relative L2 error against the exact
field, the ratio to the previous resolution, sweeps, relaxation and time.

    python3 scripts/convergence_study.py --resolutions 65 129 257 513
"""

import argparse
import csv
import sys
import time
from dataclasses import dataclass

import numpy as np

from signorini_lab import exact
from signorini_lab.grid import make_grid
from signorini_lab.solver import BoundaryData, solve_signorini, verify_complementarity


@dataclass
class StudyConfig:
    boundary: str = "regular32"
    resolutions: tuple = (65, 129, 257, 513)


def run(cfg: StudyConfig):
    sol = exact.from_name(cfg.boundary)
    rows, prev = [], None
    for res in cfg.resolutions:
        g = make_grid(sol.dim, res)
        t = time.perf_counter()
        u, diag = solve_signorini(g, BoundaryData.from_exact(sol, g))
        secs = time.perf_counter() - t
        ref = sol.on(g).values
        err = float(np.sqrt(np.sum((u.values - ref) ** 2) / np.sum(ref**2)))
        rows.append({
            "resolution": res,
            "rel_l2": err,
            "ratio": prev / err if prev else float("nan"),
            "complementarity": verify_complementarity(u) / u.scale,
            "sweeps": diag.sweeps_used,
            "relaxation": diag.relaxation,
            "seconds": secs,
        })
        prev = err
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--boundary", default=StudyConfig.boundary)
    p.add_argument("--resolutions", type=int, nargs="+", default=list(StudyConfig.resolutions))
    p.add_argument("--out", help="CSV path (default stdout)")
    args = p.parse_args(argv)
    rows = run(StudyConfig(args.boundary, tuple(args.resolutions)))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
    wr.writeheader()
    wr.writerows(rows)
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
