"""Epiperimetric comparison on the deterministic synthetic trace family.

Prints W0(w), W0(v) and the margin W0(v) - (1 - eta) W0(w) per trace, with
eta = 1/(2n+3).

    python3 scripts/epiperimetric_traces.py --count 20 --seed 20240617
"""

import argparse
from dataclasses import replace

from signorini_lab.suites import AcceptanceSettings, Context, synthetic_traces


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--count", type=int, default=AcceptanceSettings.epi_traces)
    p.add_argument("--seed", type=int, default=AcceptanceSettings.seed)
    p.add_argument("--resolution", type=int, default=AcceptanceSettings.epi_resolution)
    args = p.parse_args(argv)
    s = replace(AcceptanceSettings(), epi_traces=args.count, seed=args.seed, epi_resolution=args.resolution)
    print(f"{'i':>3} {'eps':>7} {'W0(w)':>10} {'W0(v)':>10} {'margin':>10} pass")
    for i, (_, eps, res) in enumerate(synthetic_traces(Context(s))):
        margin = res.lhs - res.rhs
        print(f"{i:3d} {eps:7.4f} {res.w_energy:10.5f} {res.v_energy:10.5f} {margin:10.5f} {res.passed}")


if __name__ == "__main__":
    main()
