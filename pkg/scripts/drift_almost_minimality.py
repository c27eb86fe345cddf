"""Almost-minimality ratio rho(r) = J(u)/J(replacement) - 1 for drift solves.

For each drift strength b e_1 the script solves on a 2D grid with the
regular profile as boundary data and reports rho on a radius ladder plus
the log-log slope.

    python3 scripts/drift_almost_minimality.py --drifts 0.5 2 8
"""

import argparse
import json
from dataclasses import asdict, dataclass

import numpy as np

from signorini_lab import exact
from signorini_lab.grid import make_grid
from signorini_lab.solver import BoundaryData, CoefficientField, solve_drift
from signorini_lab.suites import almost_minimality


@dataclass
class DriftConfig:
    resolution: int = 129
    drifts: tuple = (0.5, 2.0, 8.0)
    radii: tuple = (0.10, 0.15, 0.20, 0.25, 0.30, 0.35)


def run(cfg: DriftConfig) -> list[dict]:
    g = make_grid(2, cfg.resolution)
    bd = BoundaryData.from_exact(exact.regular32(), g)
    radii = np.asarray(cfg.radii)
    out = []
    for b in cfg.drifts:
        u, diag = solve_drift(g, bd, CoefficientField.drift(g, (b, 0.0)))
        rho = almost_minimality(u, (0.0, 0.0), radii)
        pos = rho > 0
        slope = float(np.polyfit(np.log(radii[pos]), np.log(rho[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
        out.append({"b": b, "converged": diag.converged, "sweeps": diag.sweeps_used,
                    "relaxation": diag.relaxation, "rho": rho.tolist(), "slope": slope})
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--resolution", type=int, default=DriftConfig.resolution)
    p.add_argument("--drifts", type=float, nargs="+", default=list(DriftConfig.drifts))
    args = p.parse_args(argv)
    cfg = DriftConfig(args.resolution, tuple(args.drifts))
    print(json.dumps({"config": asdict(cfg), "results": run(cfg)}, indent=2))


if __name__ == "__main__":
    main()
