"""Short 3D micro run against the macro model on the default configuration.

Usage: python3 scripts/smoke_3d.py [--config configs/default.json] [--out out/3d]
"""

import argparse
import time
from pathlib import Path

from rhizohom.harness.config import load_config
from rhizohom.harness.run import run_compare

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "default.json"))
    p.add_argument("--out", default="out/3d")
    args = p.parse_args(argv)

    t0 = time.perf_counter()
    rep = run_compare(load_config(args.config), args.out)
    t_end = rep.times()[-1]
    for e in rep.eps:
        r = next(r for r in rep.rows if r["eps"] == e and r["t"] == t_end)
        print(f"eps={e:g}: L2_S {r['L2_S']:.4e}  L2_P {r['L2_P']:.4e}  Linf_S {r['Linf_S']:.4e}  at t={t_end:g}")
    print(f"monotone = {rep.monotone}, wall time {time.perf_counter() - t0:.1f}s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
