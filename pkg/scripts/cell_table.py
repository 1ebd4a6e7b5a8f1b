"""Tabulate the effective cell tensor over the contrast grid and print bounds.

Usage: python3 scripts/cell_table.py [--N 64] [--rP 0.25] [--rR 0.4] [--nodes 17]
"""

import argparse

from rhizohom.cell import UnitCellGeometry, build_table, check_bounds, default_rho_grid


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", type=int, default=64, help="cells per side")
    p.add_argument("--rP", type=float, default=0.25, help="root radius")
    p.add_argument("--rR", type=float, default=0.4, help="rhizosphere radius")
    p.add_argument("--nodes", type=int, default=17, help="contrast nodes on [1e-3, 1e3]")
    args = p.parse_args(argv)

    geom = UnitCellGeometry(args.rP, args.rR, args.N)
    table = build_table(geom, default_rho_grid(args.nodes))
    print(f"fractions hole/rhizo/bulk = {table.hole_fraction:.5f} {table.rhizo_fraction:.5f} {table.bulk_fraction:.5f}")
    print(f"{'rho':>10} {'A11':>12} {'A22':>12} {'reuss':>12} {'voigt':>12} ok")
    for rho, A, row in zip(table.rho_grid, table.ahat, check_bounds(table)):
        print(f"{rho:10.3e} {A[0, 0]:12.6e} {A[1, 1]:12.6e} {row['reuss']:12.6e} {row['voigt']:12.6e} {row['ok']}")


if __name__ == "__main__":
    main()
