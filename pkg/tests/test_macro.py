import math

import numpy as np
import pytest

from rhizohom.cell import UnitCellGeometry, build_table
from rhizohom.errors import AlignmentError
from rhizohom.macro import MacroConfig, MacroModel, MacroState
from rhizohom.solvercore import SolverSettings

from conftest import make_const

COLUMN = MacroConfig(1.0, 1.0, 1.0, 1, 1, 10, True, 0.0)


def model(const, table, cfg=COLUMN, tau=3600.0, **kw):
    return MacroModel(cfg, const, table, SolverSettings(tau=tau, **kw))


def test_config_validation():
    with pytest.raises(ValueError):
        MacroConfig(1, 1, 1, 1, 1, 10, a=0.1)
    with pytest.raises(ValueError):
        MacroConfig(1, 1, 0, 1, 1, 10)
    with pytest.raises(ValueError):
        MacroConfig(1, 1, 1, 1, 1, 1)


def test_weights_identities(disk_geom):
    table = build_table(disk_geom, perimeter="analytic")
    m = model(make_const(), table)
    w = m.weights
    assert w["theta_R"] + w["theta_B"] == pytest.approx(w["theta_S"], abs=1e-15)
    assert w["theta_S"] == pytest.approx(1.0 - w["theta_P"], abs=1e-15)
    assert w["theta_Gamma"] == pytest.approx(2 * math.pi * disk_geom.r_P, rel=1e-15)
    assert w["theta_Gamma_P"] * w["theta_P"] == pytest.approx(w["theta_Gamma"], rel=1e-14)
    assert abs(w["theta_P"] - math.pi * disk_geom.r_P**2) <= 2 / disk_geom.N


def test_equilibrium_preserved(quiet_const, disk_table):
    for cfg in (COLUMN, MacroConfig(1.0, 1.0, 1.0, 2, 2, 8, False, 0.0)):
        m = model(quiet_const, disk_table, cfg)
        s0 = m.hydrostatic()
        s = s0
        for _ in range(100):
            s, res = m.step(s)
        assert np.max(np.abs(s.h_S - s0.h_S)) <= 1e-8
        assert np.max(np.abs(s.h_P - s0.h_P)) <= 1e-8


def test_dirichlet_layers_exact(const, disk_table):
    cfg = MacroConfig(1.0, 1.0, 1.0, 1, 1, 10, True, -0.4)
    m = model(const, disk_table, cfg)
    s, _ = m.step(m.hydrostatic(-0.3, -0.5))
    assert np.all(s.h_S[..., 0] == 0.0)
    assert np.all(s.h_P[..., 0] == -0.4)


def test_column_equals_laterally_uniform_3d(const, disk_table):
    full = model(const, disk_table, MacroConfig(1.0, 1.0, 1.0, 3, 3, 8, False, 0.0))
    col = model(const, disk_table, MacroConfig(1.0, 1.0, 1.0, 3, 3, 8, True, 0.0))
    a, _, _ = full.run(full.hydrostatic(-0.3, -0.5), 86400.0)
    b, _, _ = col.run(col.hydrostatic(-0.3, -0.5), 86400.0)
    assert a.h_S.shape == (3, 3, 9) and b.h_S.shape == (1, 1, 9)
    assert np.max(np.abs(a.h_S - b.h_S)) <= 1e-8
    assert np.max(np.abs(a.h_P - b.h_P)) <= 1e-8


def test_uncoupled_phases_evolve_independently(disk_table):
    const = make_const(ET_o=0.0, k_r=0.0)
    m = model(const, disk_table, tau=7200.0)
    a, _, _ = m.run(m.hydrostatic(-0.3, -0.5), 2 * 86400.0)
    b, _, _ = m.run(m.hydrostatic(-0.8, -0.5), 2 * 86400.0)
    c, _, _ = m.run(m.hydrostatic(-0.3, -0.1), 2 * 86400.0)
    # one joint stopping test: agreement to the nonlinear tolerance, not bitwise
    np.testing.assert_allclose(a.h_P, b.h_P, rtol=0, atol=1e-9)
    np.testing.assert_allclose(a.h_S, c.h_S, rtol=0, atol=1e-9)
    assert np.max(np.abs(a.h_S - b.h_S)) > 1e-3


def test_uncoupled_root_relaxes_to_hydrostatic(disk_table):
    const = make_const(ET_o=0.0, k_r=0.0)
    m = model(const, disk_table, tau=3600.0, tau_max=86400.0)
    s = m.hydrostatic(-0.3, -0.5)
    target = -(m.grid.z + 1.0)
    gaps = []
    for _ in range(8):
        s, _, _ = m.run(s, 86400.0)
        gaps.append(np.max(np.abs(s.h_P[0, 0] - target)))
    # steady-state oracle: its own hydrostatic profile, reached to roundoff
    assert all(b <= a + 1e-13 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 1e-12


def test_ledgers_and_exchange_antisymmetry(const, disk_table):
    m = model(const, disk_table, tau=1800.0)
    _, _, steps = m.run(m.hydrostatic(-0.3, -0.5), 86400.0)
    assert steps
    for rec in steps:
        led = rec["ledger"]
        assert led["soil"]["relative"] <= 1e-10
        assert led["root"]["relative"] <= 1e-10
        assert led["total_relative"] <= 1e-10
        assert led["exchange_imbalance"] <= 1e-12
        assert led["exchange_abs"] > 0.0


def test_exchange_weights_in_ledger(const, disk_table):
    """Root-side exchange per unit root volume times theta_P equals the soil sink."""
    m = model(const, disk_table)
    s = m.hydrostatic(-0.3, -0.5)
    new, res = m.step(s)
    led = res.ledger
    dz = m.grid.dz
    thick = np.full(m.grid.nz, dz)
    thick[-1] *= 0.5
    kG = const.root.k_gamma
    per_root_volume = kG * m.theta_Gamma_P * (new.h_S - new.h_P)[0, 0, 1:]
    root_in = m.theta_P * float(np.sum(per_root_volume * thick[1:]))
    assert led["root"]["exchange_in"] == pytest.approx(root_in, rel=1e-12)
    assert led["soil"]["exchange_in"] == pytest.approx(-root_in, rel=1e-12)


def test_zero_duration_echo(const, disk_table):
    m = model(const, disk_table)
    s0 = m.hydrostatic(-0.3, -0.5)
    final, snaps, steps = m.run(s0, 0.0)
    assert steps == [] and len(snaps) == 1
    assert np.array_equal(final.h_S, s0.h_S) and np.array_equal(final.h_P, s0.h_P)


def test_snapshots_hit_requested_times(const, disk_table):
    m = model(const, disk_table, tau=5000.0)
    _, snaps, _ = m.run(m.hydrostatic(-0.3, -0.5), 20000.0, [7000.0, 12345.0])
    assert [s.t for s in snaps] == [0.0, 7000.0, 12345.0, 20000.0]


def test_transpiration_drains_root_and_stays_nonpositive(disk_table):
    # starting from joint equilibrium, pure drying makes the initial state a
    # supersolution: heads and root storage can only fall
    const = make_const(ET_o=1e-7, P=0.0)
    m = model(const, disk_table, tau=1800.0)
    s = m.hydrostatic()
    storage = [m.problem.storage(m._heads(s))[1]]
    prev = m._heads(s)
    top = -np.inf

    def watch(t, heads, rec):
        nonlocal top, prev
        top = max(top, max(float(np.max(h)) for h in heads))
        for a, b in zip(prev, heads):
            assert np.all(b <= a + 1e-12)
        prev = heads
        led = rec["ledger"]["root"]
        inflow = led["bottom_in"] + led["surface_in"] + led["exchange_in"]
        assert led["storage_new"] - led["storage_old"] == pytest.approx(rec["tau"] * inflow, rel=1e-9, abs=1e-15)
        storage.append(led["storage_new"])

    m.run(s, 2 * 86400.0, on_step=watch)
    assert top <= 1e-8
    assert all(b <= a for a, b in zip(storage, storage[1:]))
    assert storage[-1] < storage[0]


def test_contraction_metric_properties(const, disk_table):
    m = model(const, disk_table)
    s1 = m.hydrostatic(-0.2, -0.3)
    s2 = m.hydrostatic(-0.6, -0.9)
    assert m.contraction_metric(s1, s1) == 0.0
    vol = m.node_volumes()
    exact = float(np.sum(vol * (m.theta_star(s1.h_S) - m.theta_star(s2.h_S))))
    exact += m.theta_P * float(np.sum(vol * (m.theta_root(s1.h_P) - m.theta_root(s2.h_P))))
    assert m.contraction_metric(s1, s2) == pytest.approx(exact, rel=1e-14)
    assert m.contraction_metric(s2, s1) == 0.0
    other = MacroState(np.zeros((2, 1, 11)), np.zeros((2, 1, 11)))
    with pytest.raises(AlignmentError):
        m.contraction_metric(s1, other)


def test_contraction_non_increasing(const, disk_table):
    m = model(const, disk_table, tau=1800.0)
    s1 = m.hydrostatic(-0.2, -0.3)
    s2 = m.hydrostatic(-0.6, -0.9)
    metric = [m.contraction_metric(s1, s2)]
    for _ in range(200):
        s1, _ = m.step(s1)
        s2, _ = m.step(s2)
        metric.append(m.contraction_metric(s1, s2))
    assert max(np.diff(metric)) <= 1e-8
    assert metric[-1] < metric[0]


def test_analytic_table_changes_only_exchange(disk_geom, const):
    stair = build_table(disk_geom)
    exact = build_table(disk_geom, perimeter="analytic")
    assert np.array_equal(stair.ahat, exact.ahat)
    assert stair.perimeter > exact.perimeter
