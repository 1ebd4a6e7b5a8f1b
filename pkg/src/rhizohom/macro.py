"""Homogenised dual-continuum model: soil with the effective tensor, vertical roots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import EffectiveTable
from .constitutive import Constitutive
from .errors import AlignmentError
from .solvercore import ColumnGrid, CoupledProblem, Phase, SolverSettings, harmonic, advance

OFFDIAG_TOL = 1e-8


@dataclass(frozen=True)
class MacroConfig:
    L1: float
    L2: float
    L3: float
    n1: int
    n2: int
    n3: int
    column_mode: bool = False
    a: float = 0.0

    def __post_init__(self):
        if min(self.L1, self.L2, self.L3) <= 0.0:
            raise ValueError("domain extents must be positive")
        if min(self.n1, self.n2) < 1 or self.n3 < 2:
            raise ValueError("need n1, n2 >= 1 and n3 >= 2")
        if self.a > 0.0:
            raise ValueError("root-bottom head a must be non-positive")

    def grid(self) -> ColumnGrid:
        n1, n2 = (1, 1) if self.column_mode else (self.n1, self.n2)
        return ColumnGrid(n1, n2, self.n3 + 1, self.L1 / n1, self.L2 / n2, self.L3)


@dataclass
class MacroState:
    h_S: np.ndarray
    h_P: np.ndarray
    t: float = 0.0

    def copy(self):
        return MacroState(self.h_S.copy(), self.h_P.copy(), self.t)


class _SoilMaterial:
    def __init__(self, const: Constitutive, table: EffectiveTable):
        self.R, self.B, self.table = const.rhizosphere, const.bulk, table
        self.wR, self.wB = table.rhizo_fraction, table.bulk_fraction
        self.capacity_sup = self.wR * self.R.capacity_sup() + self.wB * self.B.capacity_sup()

    def theta(self, h):
        return self.wR * self.R.theta(h) + self.wB * self.B.theta(h)

    def capacity(self, h):
        return self.wR * self.R.capacity(h) + self.wB * self.B.capacity(h)

    def conductivity(self, h):
        KR, KB = self.R.conductivity(h), self.B.conductivity(h)
        A = self.table.at(KR / KB)
        return KB * A[..., 0, 0], KB * A[..., 1, 1], self.wR * KR + self.wB * KB

    def face_conductivity(self, ha, hb, direction):
        """Vertical faces average each soil type separately; lateral faces use K_B Â."""
        KRa, KRb = self.R.conductivity(ha), self.R.conductivity(hb)
        KBa, KBb = self.B.conductivity(ha), self.B.conductivity(hb)
        out = self.wR * harmonic(KRa, KRb) + self.wB * harmonic(KBa, KBb)
        lat = direction < 2
        if np.any(lat):
            d = direction[lat]
            Aa = self.table.at(KRa[lat] / KBa[lat])
            Ab = self.table.at(KRb[lat] / KBb[lat])
            i = np.arange(d.size)
            out[lat] = harmonic(KBa[lat] * Aa[i, d, d], KBb[lat] * Ab[i, d, d])
        return out

    def offdiag(self, h):
        KR, KB = self.R.conductivity(h), self.B.conductivity(h)
        return KB * self.table.at(KR / KB)[..., 0, 1]


class _RootMaterial:
    def __init__(self, const: Constitutive, L3: float):
        self.root, self.L3 = const.root, L3
        self.capacity_sup = self.root.capacity_sup()

    def theta(self, h):
        return self.root.theta(h)

    def capacity(self, h):
        return self.root.capacity(h)

    def conductivity(self, h):
        v = self.root.tensor(h, None, self.L3)
        z = np.zeros_like(v)
        return z, z, v


class MacroModel:
    """Assembles the homogenised system on a column grid."""

    def __init__(self, cfg: MacroConfig, const: Constitutive, table: EffectiveTable, settings: SolverSettings):
        self.cfg, self.const, self.table, self.settings = cfg, const, table, settings
        self.grid = cfg.grid()
        g = self.grid
        self.theta_P = table.hole_fraction
        self.theta_S = table.soil_fraction
        self.theta_Gamma, self.theta_Gamma_P = table.exchange_weights
        forcing = const.forcing
        wS = self.theta_S
        soil = Phase(
            "soil",
            np.ones((g.n1, g.n2), dtype=bool),
            _SoilMaterial(const, table),
            0.0,
            lambda h: wS * forcing.flux(h),
            weight=1.0,
        )
        T_pot = forcing.T_pot
        root = Phase(
            "root",
            np.ones((g.n1, g.n2), dtype=bool),
            _RootMaterial(const, cfg.L3),
            cfg.a,
            lambda h: np.full(np.shape(h), T_pot),
            weight=self.theta_P,
        )
        ncol = g.n1 * g.n2
        cols = np.arange(ncol)
        coeff = np.full(ncol, const.root.k_gamma * self.theta_Gamma * g.d1 * g.d2)
        cross = None
        if g.n1 > 1 and g.n2 > 1 and float(np.max(np.abs(table.ahat[:, 0, 1]))) > OFFDIAG_TOL:
            cross = self._cross_flux
        self.problem = CoupledProblem(g, [soil, root], (cols, cols, coeff), settings, cross_flux=cross)

    @property
    def weights(self) -> dict:
        t = self.table
        return {
            "theta_R": t.rhizo_fraction,
            "theta_B": t.bulk_fraction,
            "theta_S": t.soil_fraction,
            "theta_P": t.hole_fraction,
            "theta_Gamma": self.theta_Gamma,
            "theta_Gamma_P": self.theta_Gamma_P,
        }

    # ------------------------------------------------------------------
    def _cross_flux(self, h_soil):
        """Explicit off-diagonal flux K12 dh/dx2 across x1 faces (and symmetric)."""
        g = self.grid
        h = h_soil.reshape(g.n1, g.n2, g.nz)
        k12 = self.problem.phases[0].material.offdiag(h)
        thick = g.layer_thickness
        d1 = np.gradient(h, g.d1, axis=0)
        d2 = np.gradient(h, g.d2, axis=1)
        inflow = np.zeros_like(h)
        kf = 0.5 * (k12[:-1] + k12[1:])
        q = kf * 0.5 * (d2[:-1] + d2[1:]) * g.d2 * thick  # flux into lower-index cell
        inflow[:-1] += q
        inflow[1:] -= q
        kf = 0.5 * (k12[:, :-1] + k12[:, 1:])
        q = kf * 0.5 * (d1[:, :-1] + d1[:, 1:]) * g.d1 * thick
        inflow[:, :-1] += q
        inflow[:, 1:] -= q
        return inflow.ravel()

    def initial_state(self, h_S, h_P) -> MacroState:
        g = self.grid
        shape = (g.n1, g.n2, g.nz)
        hs = np.broadcast_to(np.asarray(h_S, dtype=float), shape).copy()
        hp = np.broadcast_to(np.asarray(h_P, dtype=float), shape).copy()
        hs[..., 0] = 0.0
        hp[..., 0] = self.cfg.a
        return MacroState(hs, hp, 0.0)

    def hydrostatic(self, offset_S=0.0, offset_P=None) -> MacroState:
        """Heads ``offset - (x3 + L3)`` (equilibrium when offsets match the bottom values)."""
        z = self.grid.z
        prof = -(z + self.cfg.L3)
        offset_P = self.cfg.a if offset_P is None else offset_P
        return self.initial_state(offset_S + prof, offset_P + prof)

    def _heads(self, state):
        return [state.h_S.ravel(), state.h_P.ravel()]

    def _state(self, heads, t):
        g = self.grid
        return MacroState(heads[0].reshape(g.n1, g.n2, g.nz), heads[1].reshape(g.n1, g.n2, g.nz), t)

    def step(self, state: MacroState, tau=None):
        res = self.problem.step(self._heads(state), tau)
        return self._state(res.heads, state.t + res.tau), res

    def run(self, state: MacroState, duration, snapshot_times=(), on_step=None):
        """Integrate for ``duration``, stopping exactly at each snapshot time.

        Returns ``(final_state, snapshots, steps)`` where ``snapshots`` is a
        list of states (the initial state first) and ``steps`` the per-step
        diagnostics.
        """
        t_end = state.t + duration
        stops = sorted({float(t) for t in snapshot_times if state.t < t <= t_end} | {t_end})
        snaps = [state.copy()]
        steps = []
        heads = self._heads(state)
        t = state.t
        for stop in stops:
            if stop <= t:
                continue
            heads, log = advance(self.problem, heads, t, stop, on_step=on_step)
            steps.extend(log)
            t = stop
            if stop in snapshot_times or stop == t_end:
                snaps.append(self._state(heads, t))
        return self._state(heads, t), snaps, steps

    # ------------------------------------------------------------------
    def theta_star(self, h):
        return self.problem.phases[0].material.theta(h)

    def theta_root(self, h):
        return self.const.root.theta(h)

    def node_volumes(self):
        g = self.grid
        return np.broadcast_to(g.d1 * g.d2 * g.layer_thickness, (g.n1, g.n2, g.nz))

    def contraction_metric(self, s1: MacroState, s2: MacroState) -> float:
        return contraction_metric(s1, s2, self)


def contraction_metric(s1: MacroState, s2: MacroState, model: MacroModel) -> float:
    """Sum over continua of the positive part of the water-content difference."""
    if s1.h_S.shape != s2.h_S.shape or s1.h_P.shape != s2.h_P.shape:
        raise AlignmentError("states live on different grids")
    vol = model.node_volumes()
    dS = np.maximum(model.theta_star(s1.h_S) - model.theta_star(s2.h_S), 0.0)
    dP = np.maximum(model.theta_root(s1.h_P) - model.theta_root(s2.h_P), 0.0)
    return float(np.sum(vol * dS) + model.theta_P * np.sum(vol * dP))
