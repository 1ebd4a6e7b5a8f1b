"""Strip micro runs at decreasing eps against the macro model; prints L2 errors.

Usage: python3 scripts/strip_convergence.py [--config configs/strip.json] [--out out/strip]
"""

import argparse
from pathlib import Path

from rhizohom.harness.config import load_config
from rhizohom.harness.run import run_compare

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "strip.json"))
    p.add_argument("--out", default="out/strip")
    args = p.parse_args(argv)

    rep = run_compare(load_config(args.config), args.out)
    print(f"{'t':>10} " + " ".join(f"{'S eps=' + format(e, 'g'):>14} {'P eps=' + format(e, 'g'):>14}" for e in rep.eps))
    for t in rep.times():
        cells = []
        for e in rep.eps:
            r = next(r for r in rep.rows if r["eps"] == e and r["t"] == t)
            cells.append(f"{r['L2_S']:14.4e} {r['L2_P']:14.4e}")
        print(f"{t:10.0f} " + " ".join(cells))
    print(f"strictly decreasing in eps: {rep.monotone}")
    return 0 if rep.monotone else 1


if __name__ == "__main__":
    raise SystemExit(main())
