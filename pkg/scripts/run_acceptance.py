"""Run acceptance suites and write one report per suite.

    python3 scripts/run_acceptance.py --out reports            # all ten
    python3 scripts/run_acceptance.py --out reports 1 5 drift  # a subset

Exit status is 0 when every selected suite passes, 2 otherwise.
"""

import argparse
import json
import sys
from pathlib import Path

from signorini_lab.suites import CRITERIA, Context, resolve, run_suite


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("suites", nargs="*", help="names or criterion numbers (default: all)")
    p.add_argument("--out", default="reports")
    args = p.parse_args(argv)
    names = list(dict.fromkeys(resolve(s) for s in args.suites)) or list(CRITERIA.values())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context()
    ok = True
    for name in names:
        rep = run_suite(name, ctx)
        (out / f"verify_{name}.json").write_text(rep.to_json())
        (out / f"verify_{name}.txt").write_text(rep.text())
        (out / f"timing_{name}.json").write_text(json.dumps(rep.timing, indent=2, sort_keys=True) + "\n")
        print(rep.summary(), flush=True)
        ok &= rep.passed
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
