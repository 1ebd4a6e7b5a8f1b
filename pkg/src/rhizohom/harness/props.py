"""Property suites run by the ``props`` command (and reused by the tests)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..constitutive import Constitutive, SurfaceForcing
from ..macro import MacroConfig, MacroModel
from ..solvercore import SolverSettings

GRID = (-1e3, 10.0, 10_000)
CONTINUITY_TOL = 1e-10
FD_TOL = 1e-6
FD_STEP = 1e-6


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    value: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.suite}/{self.name}: value={self.value:.3e} tol={self.tolerance:.1e}"


def head_grid(n=GRID[2]):
    return np.linspace(GRID[0], GRID[1], n)


def fd_step(h):
    """Central-difference step, relative for |h| > 1."""
    return FD_STEP * np.maximum(1.0, np.abs(h))


def _rel_jump(fun, b):
    left = float(fun(np.nextafter(b, -np.inf)))
    right = float(fun(b))
    return abs(left - right) / max(abs(right), 1e-300)


def constitutive_suite(const: Constitutive, n=GRID[2]) -> list[Check]:
    h = head_grid(n)
    out = []
    add = lambda name, value, tol, ok: out.append(Check("constitutive", name, float(value), tol, bool(ok)))
    media = {"R": const.rhizosphere, "B": const.bulk, "P": const.root}
    root = const.root
    branch = {"R": [0.0], "B": [0.0], "P": [0.0, root.h_ae]}

    for key, med in media.items():
        th = med.theta(h)
        d = np.diff(th)
        add(f"monotone_theta_{key}", d.min(), 0.0, d.min() > 0.0)
        if key == "P":
            add("bounds_theta_P", th.min(), 0.0, th.min() > 0.0 and th.max() <= 1.0)
        else:
            add(f"bounds_theta_{key}", th.min() - med.theta_res, 0.0, th.min() >= med.theta_res and th.max() <= 1.0)
        for b in branch[key]:
            jumps = [_rel_jump(med.theta, b), _rel_jump(med.theta_reg, b)]
            if key == "P":
                jumps.append(_rel_jump(med.kappa, b))
            else:
                jumps.append(_rel_jump(med.conductivity, b))
            add(f"continuity_{key}_at_{b:g}", max(jumps), CONTINUITY_TOL, max(jumps) <= CONTINUITY_TOL)
        st = fd_step(h)
        fd = (med.theta(h + st) - med.theta(h - st)) / (2.0 * st)
        cap = med.capacity(h)
        far = np.min(np.abs(h[:, None] - np.array(branch[key])[None, :]), axis=1) >= 10.0 * st
        err = float(np.max(np.abs(cap[far] - fd[far]) / np.abs(fd[far])))
        add(f"derivative_{key}", err, FD_TOL, err <= FD_TOL)
        add(f"capacity_nonneg_{key}", cap.min(), 0.0, cap.min() >= 0.0)
        slope = float(np.max(np.diff(th) / np.diff(h)))
        add(f"lipschitz_witness_{key}", slope, np.inf, np.isfinite(slope))
        prim = const.retention_primitive(key, h)
        add(f"primitive_nonneg_{key}", prim.min(), 0.0, prim.min() >= 0.0)
        z = const.retention_primitive(key, 0.0)
        add(f"primitive_zero_{key}", abs(z), 0.0, z == 0.0)

    pos = h[h >= 0.0]
    for key in ("R", "B"):
        med = media[key]
        K = med.conductivity(h)
        lo, hi = med.K0, med.K_sat
        add(f"bounds_K_{key}", K.min() / lo - 1.0, 0.0, K.min() >= lo * (1 - 1e-12) and K.max() <= hi)
        add(f"monotone_K_{key}", np.diff(K).min(), 0.0, np.diff(K).min() >= 0.0)
        Kp = med.conductivity(pos)
        add(f"constant_K_{key}_nonneg", np.ptp(Kp), 0.0, np.ptp(Kp) == 0.0)
    kap = root.kappa(h)
    add("bounds_kappa_P", kap.min(), 0.0, kap.min() > 0.0 and kap.max() <= 1.0)
    add("monotone_kappa_P", np.diff(kap).min(), 0.0, np.diff(kap).min() >= 0.0)
    add("constant_kappa_P_nonneg", np.ptp(root.kappa(pos)), 0.0, np.all(root.kappa(pos) == 1.0))

    fo = const.forcing
    f = fo.flux(h)
    ro = fo.runoff(h)
    add("flux_bound", np.abs(f).max() / max(fo.f_max, 1e-300), 1.0, np.abs(f).max() <= fo.f_max * (1 + 1e-12))
    add("monotone_runoff", np.diff(ro).min(), 0.0, np.diff(ro).min() >= 0.0)
    add("monotone_flux", np.diff(f).min(), 0.0, np.diff(f).min() >= 0.0)
    r0 = float(fo.runoff(0.0))
    add("runoff_at_zero", abs(r0 - fo.P), 1e-15 * max(fo.P, 1e-300), abs(r0 - fo.P) <= 1e-15 * fo.P)
    r_dry = float(fo.runoff(-1e3))
    add("runoff_dry_limit", r_dry, 1e-12 * fo.P, r_dry <= 1e-12 * fo.P)
    r_wet = float(fo.runoff(1e3))
    target = fo.runoff_max
    err = abs(r_wet - target) / target if target > 0 else abs(r_wet)
    add("runoff_wet_limit", err, 1e-12, err <= 1e-12)
    return out


def conservation_suite(const: Constitutive, table, settings: SolverSettings, L3=1.0, n3=10, steps=20) -> list[Check]:
    """Short column runs: equilibrium, ledgers and non-positivity."""
    out = []
    add = lambda name, value, tol, ok: out.append(Check("conservation", name, float(value), tol, bool(ok)))
    cfg = MacroConfig(1.0, 1.0, L3, 1, 1, n3, True, 0.0)
    model = MacroModel(cfg, const, table, settings)
    state = model.hydrostatic(-0.2, -0.4)
    worst_phase, worst_total, worst_ex, hmax = 0.0, 0.0, 0.0, -np.inf
    dirichlet = 0.0
    for _ in range(steps):
        state, res = model.step(state)
        led = res.ledger
        worst_phase = max(worst_phase, led["soil"]["relative"], led["root"]["relative"])
        worst_total = max(worst_total, led["total_relative"])
        worst_ex = max(worst_ex, led["exchange_imbalance"])
        hmax = max(hmax, float(state.h_S.max()), float(state.h_P.max()))
        dirichlet = max(dirichlet, float(np.abs(state.h_S[..., 0]).max()), float(np.abs(state.h_P[..., 0] - cfg.a).max()))
    add("ledger_phase_relative", worst_phase, 1e-10, worst_phase <= 1e-10)
    add("ledger_total_relative", worst_total, 1e-10, worst_total <= 1e-10)
    add("exchange_cancellation", worst_ex, 1e-12, worst_ex <= 1e-12)
    add("dirichlet_exact", dirichlet, 0.0, dirichlet == 0.0)
    if const.forcing.P == 0.0:
        add("non_positivity", hmax, 1e-8, hmax <= 1e-8)

    fo = const.forcing
    quiet = Constitutive(
        const.rhizosphere, const.bulk, const.root, SurfaceForcing(0.0, 0.0, fo.C_RO, fo.K_cb, fo.Ke_max, fo.Ke_scale)
    )
    eq = MacroModel(cfg, quiet, table, settings)
    s0 = eq.hydrostatic()
    s = s0
    for _ in range(steps):
        s, _ = eq.step(s)
    drift = max(float(np.abs(s.h_S - s0.h_S).max()), float(np.abs(s.h_P - s0.h_P).max()))
    add("equilibrium_drift", drift, 1e-8, drift <= 1e-8)
    return out


def curve_samples(const: Constitutive, h=None):
    """Columns of the ``props constitutive`` dump."""
    h = head_grid() if h is None else np.asarray(h, dtype=float)
    return {
        "h": h,
        "theta_R": const.rhizosphere.theta(h),
        "theta_B": const.bulk.theta(h),
        "theta_P": const.root.theta(h),
        "K_R": const.rhizosphere.conductivity(h),
        "K_B": const.bulk.conductivity(h),
        "kappa_P": const.root.kappa(h),
        "f": const.forcing.flux(h),
        "RO": const.forcing.runoff(h),
    }
