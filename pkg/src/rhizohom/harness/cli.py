"""``rhizohom`` command line.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 property-suite failure, 5 comparison alignment error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from ..errors import RhizohomError
from . import run as R
from .config import load_config

COMMANDS = ("cell", "macro", "micro", "compare", "props", "run")


def _parser():
    p = argparse.ArgumentParser(prog="rhizohom", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("suite", nargs="?", help="props only: 'constitutive' dumps curve samples")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (default: outputs.directory of the config)")
    p.add_argument("--strict", action="store_true", help="fail on non-monotone nonlinear residuals")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def execute(command, cfg, out, strict=False, suite=None):
    """Run one command; returns a short summary string."""
    meta = R.Meta(command)
    R.write_config(out, cfg)
    try:
        if command == "cell":
            table, prov = R.run_cell(cfg, out, meta=meta)
            summary = f"cell: {len(table.rho_grid)} contrasts, bounds ok = {prov['bounds_ok']}"
        elif command == "macro":
            _, snaps, steps = R.run_macro(cfg, out, strict=strict, meta=meta)
            summary = f"macro: {len(steps)} steps, {len(snaps)} snapshots"
        elif command == "micro":
            table = None
            lines = []
            for eps in cfg.micro.eps:
                sub = "" if len(cfg.micro.eps) == 1 else R.eps_tag(eps)
                _, snaps, steps, _, _ = R.run_micro(cfg, out, eps, table, strict, meta, subdir=sub)
                lines.append(f"eps={eps:g}: {len(steps)} steps")
            summary = "micro: " + "; ".join(lines)
        elif command == "compare":
            rep = R.run_compare(cfg, out, strict=strict, meta=meta)
            summary = f"compare: monotone = {rep.monotone}"
        elif command == "props":
            checks = R.run_props(cfg, out, suite, meta=meta)
            summary = f"props: {len(checks)} checks passed"
        else:  # run: every flagged mode in pipeline order
            parts = []
            for mode in ("props", "cell", "macro", "micro", "compare"):
                if getattr(cfg.modes, mode):
                    parts.append(execute(mode, cfg, os.path.join(out, mode), strict))
            summary = "\n".join(parts)
    finally:
        meta.write(out, cfg)
    return summary


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.suite is not None and args.command != "props":
            raise R.ConfigError(f"unexpected argument {args.suite!r} for command {args.command}")
        out = args.out or cfg.outputs.directory
        if args.out:
            cfg = replace(cfg, outputs=replace(cfg.outputs, directory=args.out))
        print(execute(args.command, cfg, out, args.strict, args.suite))
    except RhizohomError as err:
        print(f"rhizohom: error: {err}", file=sys.stderr)
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
