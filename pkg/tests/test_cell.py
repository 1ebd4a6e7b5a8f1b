import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhizohom.cell import (
    BULK,
    RHIZO,
    ROOT,
    UnitCellGeometry,
    ahat,
    analytic_perimeter,
    build_table,
    check_bounds,
    classify_cell,
    effective_tensor,
    reuss_voigt,
    solve_corrector,
)
from rhizohom.constitutive import SoilHydraulics
from rhizohom.errors import GeometryError, TableRangeError

from conftest import soils


# ---- classification ---------------------------------------------------------
def test_no_hole_means_empty_interface():
    cls = classify_cell(UnitCellGeometry(0.0, 0.3, 32))
    assert cls.fractions[0] == 0.0
    assert cls.faces.shape == (0, 4)
    assert cls.perimeter == 0.0


def test_laminate_columns_exact():
    cls = classify_cell(UnitCellGeometry(0.0, 0.0, 100, mode="laminate", fractions=(0.2, 0.3, 0.5)))
    col = cls.labels[:, 0]
    assert [np.count_nonzero(col == k) for k in (ROOT, RHIZO, BULK)] == [20, 30, 50]
    assert np.all(cls.labels == col[:, None])


def test_disk_root_fraction_against_counting_oracle():
    # counting oracle: fraction of a 4096^2 sample lattice inside the disk
    M = 4096
    c = (np.arange(M) + 0.5) / M - 0.5
    inside = (c[:, None] ** 2 + c[None, :] ** 2 < 0.04).mean()
    cls = classify_cell(UnitCellGeometry(0.2, 0.35, 256))
    assert abs(cls.fractions[0] - inside) <= 2 / 256
    assert abs(cls.fractions[0] - math.pi * 0.04) <= 2 / 256


def test_interface_faces_touch_root_and_soil():
    cls = classify_cell(UnitCellGeometry(0.2, 0.35, 64))
    L = cls.labels
    assert np.all(L[cls.faces[:, 0], cls.faces[:, 1]] == ROOT)
    assert np.all(L[cls.faces[:, 2], cls.faces[:, 3]] != ROOT)
    # a staircase disk boundary tends to 8 r, never below the curve length 2 pi r
    assert cls.perimeter >= 2 * math.pi * 0.2


def test_geometry_errors():
    with pytest.raises(GeometryError):
        UnitCellGeometry(0.2, 0.49, 32)
    with pytest.raises(GeometryError):
        UnitCellGeometry(0.2, 0.3, 8)
    with pytest.raises(GeometryError):
        UnitCellGeometry(0.3, 0.2, 32)
    with pytest.raises(GeometryError):
        UnitCellGeometry(0.0, 0.0, 32, mode="laminate", fractions=(0.5, 0.5, 0.5))


def test_analytic_perimeter():
    assert analytic_perimeter(UnitCellGeometry(0.2, 0.3, 32)) == pytest.approx(2 * math.pi * 0.2)
    lam = UnitCellGeometry(0.0, 0.0, 32, mode="laminate", fractions=(0.25, 0.25, 0.5))
    assert analytic_perimeter(lam) == 2.0
    assert classify_cell(lam).perimeter == 2.0


# ---- correctors -----------------------------------------------------------------
@pytest.mark.parametrize("j", [1, 2])
def test_uniform_cell_corrector_vanishes(j):
    w, info = solve_corrector(UnitCellGeometry(0.0, 0.3, 32), 1.0, j)
    assert np.max(np.abs(w)) <= 1e-12
    assert info["mean"] == pytest.approx(0.0, abs=1e-14)


def test_laminate_longitudinal_corrector_vanishes():
    geom = UnitCellGeometry(0.0, 0.0, 40, mode="laminate", fractions=(0.25, 0.25, 0.5))
    # strips vary along axis 0, so direction 2 runs parallel to them
    w, _ = solve_corrector(geom, 4.0, 2)
    assert np.max(np.abs(w)) <= 1e-12
    w1, info = solve_corrector(geom, 4.0, 1)
    assert np.max(np.abs(w1)) > 1e-3
    assert info["residual"] <= 1e-12 and abs(info["mean"]) <= 1e-12


def test_corrector_zero_on_root_and_mean_zero():
    geom = UnitCellGeometry(0.2, 0.35, 64)
    cls = classify_cell(geom)
    w, info = solve_corrector(geom, 4.0, 1, cls=cls)
    assert np.all(w[cls.labels == ROOT] == 0.0)
    assert abs(info["mean"]) <= 1e-13
    assert info["residual"] <= 1e-12


def test_bad_arguments():
    geom = UnitCellGeometry(0.2, 0.35, 32)
    with pytest.raises(ValueError):
        solve_corrector(geom, -1.0, 1)
    with pytest.raises(ValueError):
        solve_corrector(geom, 1.0, 3)


# ---- effective tensor -------------------------------------------------------
def test_uniform_cell_identity():
    A = ahat(UnitCellGeometry(0.0, 0.3, 32), 1.0)
    np.testing.assert_allclose(A, np.eye(2), atol=1e-10, rtol=0)


def test_laminate_harmonic_and_arithmetic_means():
    geom = UnitCellGeometry(0.0, 0.0, 64, mode="laminate", fractions=(0.0, 0.5, 0.5))
    A = ahat(geom, 4.0)
    assert A[0, 0] == pytest.approx(1.0 / (0.5 / 4.0 + 0.5 / 1.0), rel=1e-6)
    assert A[1, 1] == pytest.approx(0.5 * 4.0 + 0.5 * 1.0, rel=1e-6)
    assert abs(A[0, 1]) <= 1e-12


def test_perforated_laminate_longitudinal_mean():
    # a root strip blocks transverse flow entirely; longitudinal entry stays arithmetic
    geom = UnitCellGeometry(0.0, 0.0, 64, mode="laminate", fractions=(0.25, 0.25, 0.5))
    A = ahat(geom, 4.0)
    assert A[1, 1] == pytest.approx(0.25 * 4.0 + 0.5, rel=1e-10)
    assert A[0, 0] == pytest.approx(0.0, abs=1e-10)


def test_disk_against_fine_reference():
    geom = lambda N: UnitCellGeometry(0.2, 0.35, N)
    coarse = ahat(geom(256), 4.0)
    fine = ahat(geom(1024), 4.0)
    assert np.max(np.abs(coarse - fine)) <= 0.01 * fine[0, 0]


def test_disk_grid_convergence_monotone():
    A = {N: ahat(UnitCellGeometry(0.2, 0.35, N), 4.0) for N in (64, 128, 256, 512, 1024)}
    gaps = [np.max(np.abs(A[N] - A[2 * N])) for N in (64, 128, 256, 512)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_disk_rho_one_is_isotropic_and_below_voigt():
    N = 128
    A = ahat(UnitCellGeometry(0.2, 0.35, N), 1.0)
    assert abs(A[0, 0] - A[1, 1]) <= 2 / N
    assert abs(A[0, 1]) <= 1e-8
    assert A[0, 0] < 1.0 - math.pi * 0.04 + 2 / N
    assert A[0, 0] > 0.0


def test_contrast_factorisation():
    geom = UnitCellGeometry(0.2, 0.35, 64)
    for rho in (0.01, 4.0, 300.0):
        base = ahat(geom, rho, k_bulk=1.0)
        scaled = ahat(geom, rho, k_bulk=10.0)
        np.testing.assert_allclose(scaled, base, rtol=1e-10, atol=1e-14)


def test_table_bounds_and_symmetry(disk_table):
    rows = check_bounds(disk_table)
    assert len(rows) == len(disk_table.rho_grid) == 33
    assert all(r["ok"] for r in rows)
    assert max(r["asym"] for r in rows) <= 1e-8


def test_reuss_voigt_values():
    assert reuss_voigt(4.0, (0.0, 0.5, 0.5)) == pytest.approx((1.6, 2.5))
    assert reuss_voigt(4.0, (0.1, 0.4, 0.5))[0] == 0.0


def test_table_interpolation_at_midpoints():
    geom = UnitCellGeometry(0.2, 0.35, 64)
    table = build_table(geom)
    mids = np.sqrt(table.rho_grid[:-1] * table.rho_grid[1:])[::4]
    for rho in mids:
        direct = ahat(geom, float(rho))
        interp = table.at(rho)
        assert np.max(np.abs(interp - direct)) <= 5e-3 * direct[0, 0]


def test_table_range_error(disk_table):
    with pytest.raises(TableRangeError):
        disk_table.at(1e4)
    with pytest.raises(TableRangeError):
        disk_table.at(np.array([1.0, 1e-5]))
    # endpoints are inside
    disk_table.at(disk_table.rho_grid[[0, -1]])


def test_table_threads_identical(disk_geom):
    a = build_table(disk_geom, threads=1)
    b = build_table(disk_geom, threads=3)
    assert np.array_equal(a.ahat, b.ahat)


def test_effective_tensor_uniform_soil():
    s = SoilHydraulics(0.05, 0.4, 2.0, 1.8, 1e-5)
    h = np.array([-3.0, -0.2, 0.5])
    K = s.conductivity(h)
    plain = build_table(UnitCellGeometry(0.0, 0.3, 16))
    T = effective_tensor(h, s, s, plain)
    for k in range(3):
        np.testing.assert_allclose(T[k], K[k] * np.eye(3), rtol=1e-10, atol=0)
    holed = build_table(UnitCellGeometry(0.2, 0.3, 32))
    T = effective_tensor(h, s, s, holed)
    np.testing.assert_allclose(T[:, 2, 2], (1 - holed.hole_fraction) * K, rtol=1e-14)
    assert abs(holed.hole_fraction - math.pi * 0.04) <= 2 / 32


def test_effective_tensor_scales_linearly(disk_table):
    rhizo, bulk = soils()
    doubled = [SoilHydraulics(s.theta_res, s.theta_sat, s.alpha, s.n, 2 * s.K_sat, s.l, s.delta) for s in (rhizo, bulk)]
    h = np.linspace(-5.0, 0.0, 7)
    T1 = effective_tensor(h, rhizo, bulk, disk_table)
    T2 = effective_tensor(h, *doubled, disk_table)
    np.testing.assert_allclose(T2, 2 * T1, rtol=1e-12)
    assert np.all(T1[:, :2, 2] == 0.0) and np.all(T1[:, 2, :2] == 0.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3.0, 3.0))
def test_ahat_within_bounds_random_contrast(log_rho):
    rho = 10.0**log_rho
    geom = UnitCellGeometry(0.15, 0.3, 32)
    cls = classify_cell(geom)
    A = ahat(geom, rho, cls=cls)
    lo, hi = reuss_voigt(rho, cls.fractions)
    ev = np.linalg.eigvalsh(A)
    assert np.max(np.abs(A - A.T)) <= 1e-8
    assert lo - 1e-12 <= ev.min() and ev.max() <= hi * (1 + 1e-12)
