"""Implicit time stepping for coupled soil/root Richards systems on column grids.

Both the homogenised and the resolved solver are expressed as a
:class:`CoupledProblem`: two phases (soil, root), each living on a set of
vertical columns of a structured grid, joined by exchange pairs.  Heads sit on
vertical nodes ``x3 = -L3 + k dz`` (k = 0 is the Dirichlet water-table node,
k = nz-1 the surface node with a half control volume) and on horizontal cell
centres.  Every phase equation is written per unit total volume so the
assembled operator is symmetric.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .linalg import pcg

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverSettings:
    tau: float
    scheme: str = "rothe"
    nonlinear: str = "l_scheme"
    L_stab: float = 1.0
    tol_nl: float = 1e-12
    max_nl: int = 300
    tol_lin: float = 1e-14
    max_lin: int = 10000
    linear: str = "direct"
    coupling: str = "implicit"
    tau_max: float | None = None
    max_halvings: int = 10
    fast_iterations: int = 5
    strict: bool = False

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.scheme not in ("rothe", "fully_implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.nonlinear not in ("l_scheme", "newton"):
            raise ValueError(f"unknown nonlinear solver {self.nonlinear!r}")
        if self.linear not in ("direct", "cg"):
            raise ValueError(f"unknown linear solver {self.linear!r}")
        if self.coupling not in ("implicit", "lagged"):
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.L_stab <= 0.0:
            raise ValueError("L_stab must be positive")

    @property
    def tau_ceiling(self) -> float:
        return self.tau if self.tau_max is None else self.tau_max


@dataclass(frozen=True)
class ColumnGrid:
    """``n1 x n2`` horizontal cells of size ``d1 x d2``; ``nz`` vertical nodes."""

    n1: int
    n2: int
    nz: int
    d1: float
    d2: float
    L3: float

    @property
    def dz(self) -> float:
        return self.L3 / (self.nz - 1)

    @property
    def z(self) -> np.ndarray:
        return -self.L3 + self.dz * np.arange(self.nz)

    @property
    def layer_thickness(self) -> np.ndarray:
        t = np.full(self.nz, self.dz)
        t[0] = t[-1] = 0.5 * self.dz
        return t


@dataclass
class Phase:
    """One continuum (soil or root) on the active columns ``mask``.

    ``material`` must provide ``theta(h)``, ``capacity(h)`` and
    ``conductivity(h) -> (K1, K2, K3)`` for the phase node vector.  An
    optional ``face_conductivity(h_a, h_b, direction)`` replaces the default
    harmonic average of node values.  ``weight`` scales storage, conductances and
    the surface flux (volume fraction of a continuum written per unit
    total volume).
    """

    name: str
    mask: np.ndarray
    material: object
    dirichlet: float
    top_flux: object
    weight: float = 1.0
    # filled by CoupledProblem
    columns: np.ndarray = field(default=None, repr=False)

    def nodes(self, nz):
        return len(self.columns) * nz


@dataclass
class StepResult:
    heads: list
    iterations: int
    residuals: list
    ledger: dict
    tau: float
    L_ok: bool
    monotone: bool


def _local_sup(material, lo, hi, samples=9):
    """Sampled sup of the water capacity over [lo, hi] per node (5% margin)."""
    w = np.linspace(0.0, 1.0, samples)
    hs = lo[None, :] + (hi - lo)[None, :] * w[:, None]
    return 1.05 * material.capacity(hs).max(axis=0)


def harmonic(a, b):
    s = a + b
    return np.where(s > 0.0, 2.0 * a * b / np.where(s > 0.0, s, 1.0), 0.0)


class CoupledProblem:
    """Finite-volume system for two phases joined by exchange pairs.

    Parameters
    ----------
    grid : ColumnGrid
    phases : list[Phase]
        Usually ``[soil, root]``.
    exchange : tuple of arrays ``(i_soil_col, i_root_col, coeff_per_layer_area)``
        Column-level pairs; the exchange coefficient of a node pair is
        ``coeff * layer_thickness[k]``.  Pairs at the Dirichlet layer are
        dropped.
    cross_flux : callable, optional
        ``cross_flux(h_soil) -> inflow per soil node``; explicit flux-form
        correction, evaluated at the current iterate.
    """

    def __init__(self, grid, phases, exchange, settings: SolverSettings, cross_flux=None):
        self.grid = grid
        self.phases = phases
        self.settings = settings
        self.cross_flux = cross_flux
        nz = grid.nz
        thick = grid.layer_thickness
        self._colmaps = []
        offset = 0
        self._offsets = []
        for ph in phases:
            ph.mask = np.asarray(ph.mask, dtype=bool)
            ph.columns = np.flatnonzero(ph.mask.ravel())
            cmap = -np.ones(grid.n1 * grid.n2, dtype=np.int64)
            cmap[ph.columns] = np.arange(len(ph.columns))
            self._colmaps.append(cmap.reshape(grid.n1, grid.n2))
            self._offsets.append(offset)
            offset += len(ph.columns) * (nz - 1)
        self.n_unknowns = offset

        # per-phase face tables in phase node numbering (node = col * nz + k)
        self._faces = []
        for ph, cmap in zip(phases, self._colmaps):
            faces = {"a": [], "b": [], "g": [], "dir": [], "vert": []}
            for axis, (d_perp, d_par) in enumerate(((grid.d2, grid.d1), (grid.d1, grid.d2))):
                c0 = cmap[:-1, :] if axis == 0 else cmap[:, :-1]
                c1 = cmap[1:, :] if axis == 0 else cmap[:, 1:]
                ok = (c0 >= 0) & (c1 >= 0)
                ca, cb = c0[ok], c1[ok]
                for k in range(1, nz):
                    faces["a"].append(ca * nz + k)
                    faces["b"].append(cb * nz + k)
                    faces["g"].append(np.full(len(ca), ph.weight * d_perp * thick[k] / d_par))
                    faces["dir"].append(np.full(len(ca), axis))
                    faces["vert"].append(np.zeros(len(ca), dtype=bool))
            cols = np.arange(len(ph.columns))
            area = grid.d1 * grid.d2
            for k in range(nz - 1):
                faces["a"].append(cols * nz + k)  # lower node
                faces["b"].append(cols * nz + k + 1)  # upper node
                faces["g"].append(np.full(len(cols), ph.weight * area / grid.dz))
                faces["dir"].append(np.full(len(cols), 2))
                faces["vert"].append(np.ones(len(cols), dtype=bool))
            self._faces.append({k: np.concatenate(v) for k, v in faces.items()})

        # exchange node pairs
        s_col, r_col, coeff = (np.asarray(x) for x in exchange) if exchange is not None else ([], [], [])
        s_col = np.asarray(s_col, dtype=np.int64)
        r_col = np.asarray(r_col, dtype=np.int64)
        coeff = np.asarray(coeff, dtype=float)
        ks = np.arange(1, nz)
        self._ex_s = (s_col[:, None] * nz + ks[None, :]).ravel()
        self._ex_r = (r_col[:, None] * nz + ks[None, :]).ravel()
        self._ex_c = (coeff[:, None] * thick[None, 1:]).ravel()

        # control volumes per phase node
        self._vol = []
        for ph in phases:
            v = np.tile(grid.d1 * grid.d2 * thick, len(ph.columns)) * ph.weight
            self._vol.append(v)
        self._unknown = [np.tile(np.arange(nz) > 0, len(ph.columns)) for ph in phases]
        self._top = [np.arange(len(ph.columns)) * nz + nz - 1 for ph in phases]

    # ------------------------------------------------------------------
    def global_index(self, p, nodes):
        """Unknown index of phase-``p`` nodes (-1 for Dirichlet nodes)."""
        nz = self.grid.nz
        col, k = np.divmod(nodes, nz)
        return np.where(k > 0, self._offsets[p] + col * (nz - 1) + k - 1, -1)

    def pack(self, heads):
        x = np.empty(self.n_unknowns)
        for p, h in enumerate(heads):
            x[self.global_index(p, np.flatnonzero(self._unknown[p]))] = h[self._unknown[p]]
        return x

    def unpack(self, x):
        out = []
        for p, ph in enumerate(self.phases):
            h = np.full(len(ph.columns) * self.grid.nz, float(ph.dirichlet))
            idx = np.flatnonzero(self._unknown[p])
            h[idx] = x[self.global_index(p, idx)]
            out.append(h)
        return out

    def apply_dirichlet(self, heads):
        out = []
        for p, ph in enumerate(self.phases):
            h = np.array(heads[p], dtype=float, copy=True)
            h[~self._unknown[p]] = ph.dirichlet
            out.append(h)
        return out

    def storage(self, heads):
        """Water volume per phase (unknown nodes only)."""
        return [
            float(np.sum((self._vol[p] * ph.material.theta(heads[p]))[self._unknown[p]]))
            for p, ph in enumerate(self.phases)
        ]

    # ------------------------------------------------------------------
    def _assemble(self, K_heads, f_heads, ex_heads, tau):
        """Conductance matrix, right-hand side and flux bookkeeping."""
        rows, cols, vals = [], [], []
        rhs = np.zeros(self.n_unknowns)
        dz = self.grid.dz
        transm = []
        for p, ph in enumerate(self.phases):
            F = self._faces[p]
            hook = getattr(ph.material, "face_conductivity", None)
            if hook is None:
                Kn = np.stack(ph.material.conductivity(K_heads[p]))  # (3, nodes)
                kf = harmonic(Kn[F["dir"], F["a"]], Kn[F["dir"], F["b"]])
            else:
                kf = hook(K_heads[p][F["a"]], K_heads[p][F["b"]], F["dir"])
            T = F["g"] * kf
            transm.append(T)
            ga = self.global_index(p, F["a"])
            gb = self.global_index(p, F["b"])
            hD = ph.dirichlet
            both = (ga >= 0) & (gb >= 0)
            rows += [ga[both], gb[both], ga[both], gb[both]]
            cols += [ga[both], gb[both], gb[both], ga[both]]
            vals += [T[both], T[both], -T[both], -T[both]]
            # a Dirichlet (only the lower node of a vertical face can be)
            adir = (ga < 0) & (gb >= 0)
            rows.append(gb[adir])
            cols.append(gb[adir])
            vals.append(T[adir])
            np.add.at(rhs, gb[adir], T[adir] * hD)
            # gravity: inflow to lower node  +T dz, to upper node -T dz
            vert = F["vert"]
            m = vert & (ga >= 0)
            np.add.at(rhs, ga[m], T[m] * dz)
            m = vert & (gb >= 0)
            np.add.at(rhs, gb[m], -T[m] * dz)
            # surface flux (outward positive)
            top = self._top[p]
            area = self.grid.d1 * self.grid.d2 * ph.weight
            q = area * np.broadcast_to(ph.top_flux(f_heads[p][top]), top.shape)
            np.add.at(rhs, self.global_index(p, top), -q)

        ex = {"soil_in": None, "root_in": None}
        if len(self._ex_c):
            gs = self.global_index(0, self._ex_s)
            gr = self.global_index(1, self._ex_r)
            c = self._ex_c
            rows += [gs, gr]
            cols += [gs, gr]
            vals += [c, c]
            if self.settings.coupling == "implicit":
                rows += [gs, gr]
                cols += [gr, gs]
                vals += [-c, -c]
            else:
                np.add.at(rhs, gs, c * ex_heads[1][self._ex_r])
                np.add.at(rhs, gr, c * ex_heads[0][self._ex_s])
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_unknowns, self.n_unknowns),
        ).tocsr()
        return A, rhs, transm

    def _cross(self, heads):
        if self.cross_flux is None:
            return 0.0
        inflow = self.cross_flux(heads[0])
        out = np.zeros(self.n_unknowns)
        idx = np.flatnonzero(self._unknown[0])
        out[self.global_index(0, idx)] = inflow[idx]
        return out

    def _ledger(self, old, new, tau, transm, f_heads, ex_heads, cross):
        """Per-phase storage change versus boundary/exchange inflow over the step."""
        dz = self.grid.dz
        s_old = self.storage(old)
        s_new = self.storage(new)
        led = {}
        for p, ph in enumerate(self.phases):
            F = self._faces[p]
            T = transm[p]
            ga = self.global_index(p, F["a"])
            gb = self.global_index(p, F["b"])
            adir = (ga < 0) & (gb >= 0)
            h = new[p]
            bottom = float(np.sum(-T[adir] * (h[F["b"][adir]] - h[F["a"][adir]] + dz)))
            top = self._top[p]
            area = self.grid.d1 * self.grid.d2 * ph.weight
            surf = float(np.sum(-area * np.broadcast_to(ph.top_flux(f_heads[p][top]), top.shape)))
            led[ph.name] = {
                "storage_old": s_old[p],
                "storage_new": s_new[p],
                "bottom_in": bottom,
                "surface_in": surf,
                "exchange_in": 0.0,
            }
        if len(self._ex_c):
            c = self._ex_c
            hs, hr = new[0][self._ex_s], new[1][self._ex_r]
            if self.settings.coupling == "implicit":
                soil_in = c * (hr - hs)
                root_in = c * (hs - hr)
            else:
                soil_in = c * (ex_heads[1][self._ex_r] - hs)
                root_in = c * (ex_heads[0][self._ex_s] - hr)
            led[self.phases[0].name]["exchange_in"] = float(np.sum(soil_in))
            led[self.phases[1].name]["exchange_in"] = float(np.sum(root_in))
            led["exchange_abs"] = float(np.sum(np.abs(soil_in)))
        else:
            led["exchange_abs"] = 0.0
        if self.cross_flux is not None:
            led["cross_sum"] = float(np.sum(cross)) if np.ndim(cross) else 0.0
        total_res = 0.0
        total_scale = 0.0
        for ph in self.phases:
            e = led[ph.name]
            inflow = e["bottom_in"] + e["surface_in"] + e["exchange_in"]
            res = (e["storage_new"] - e["storage_old"]) - tau * inflow
            scale = max(
                e["storage_new"],
                tau * (abs(e["bottom_in"]) + abs(e["surface_in"]) + abs(e["exchange_in"])),
            )
            e["residual"] = res
            e["relative"] = abs(res) / scale if scale > 0 else 0.0
            total_res += res
            total_scale += scale
        led["total_residual"] = total_res
        led["total_relative"] = abs(total_res) / total_scale if total_scale > 0 else 0.0
        names = [ph.name for ph in self.phases]
        if len(names) == 2:
            a, b = led[names[0]]["exchange_in"], led[names[1]]["exchange_in"]
            led["exchange_imbalance"] = abs(a + b) / led["exchange_abs"] if led["exchange_abs"] > 0 else 0.0
        return led

    def _linear_solver(self, M):
        s = self.settings
        if s.linear == "direct":
            lu = spla.splu(M.tocsc(), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
            return lu.solve

        diag = M.diagonal()

        def solve(b):
            x, _ = pcg(lambda v: M @ v, b, diag, rtol=s.tol_lin, maxiter=s.max_lin)
            return x

        return solve

    # ------------------------------------------------------------------
    def step(self, heads, tau=None) -> StepResult:
        """One backward-Euler step from ``heads``; raises SolverError on failure."""
        s = self.settings
        tau = s.tau if tau is None else tau
        old = self.apply_dirichlet(heads)
        theta_old = [ph.material.theta(old[p]) for p, ph in enumerate(self.phases)]
        vol_tau = [self._vol[p] / tau for p in range(len(self.phases))]
        stored = sum(self.storage(old))

        def gvec(per_phase):
            out = np.empty(self.n_unknowns)
            for p in range(len(self.phases)):
                idx = np.flatnonzero(self._unknown[p])
                out[self.global_index(p, idx)] = per_phase[p][idx]
            return out

        Mdiag_unit = gvec(vol_tau)
        windows = None

        def stabiliser(cur):
            wins, Ls = [], []
            for p, ph in enumerate(self.phases):
                a, b = np.minimum(old[p], cur[p]), np.maximum(old[p], cur[p])
                pad = np.maximum(0.05, 0.5 * (b - a))
                lo, hi = a - pad, b + pad
                wins.append((lo, hi))
                Ls.append(np.minimum(s.L_stab, _local_sup(ph.material, lo, hi)))
            return wins, Ls

        def inside(wins, cur):
            return all(bool(np.all((cur[p] >= w[0]) & (cur[p] <= w[1]))) for p, w in enumerate(wins))

        theta_old_g = gvec(theta_old)

        x = self.pack(old)
        cur = old
        implicit = s.scheme == "fully_implicit"
        A, rhs, transm = self._assemble(old, old, old, tau)
        solver = None
        history = []
        monotone = True
        converged = False
        it = 0
        for it in range(1, s.max_nl + 1):
            if implicit and it > 1:
                A, rhs, transm = self._assemble(cur, cur, old, tau)
                solver = None
            theta_cur = gvec([ph.material.theta(cur[p]) for p, ph in enumerate(self.phases)])
            cross = self._cross(cur)
            # residual of the current iterate
            R = Mdiag_unit * (theta_cur - theta_old_g) + A @ x - rhs - cross
            flux_scale = tau * float(np.sum(np.abs(rhs)))
            rel = tau * float(np.sum(np.abs(R))) / max(stored, flux_scale, 1e-300)
            if history and rel > history[-1] * (1 + 1e-9) and rel > 1e-14:
                monotone = False
            history.append(rel)
            if rel <= s.tol_nl and it > 1:
                converged = True
                break
            if s.nonlinear == "newton":
                cap = gvec([ph.material.capacity(cur[p]) for p, ph in enumerate(self.phases)])
                stab = cap
                solver = None
            else:
                if windows is None or not inside(windows, cur):
                    windows, Lnode = stabiliser(cur)
                    L_g = gvec(Lnode)
                    solver = None
                stab = L_g
            if solver is None:
                M = A + sp.diags(Mdiag_unit * stab)
                solver = self._linear_solver(M)
            b = rhs + cross - Mdiag_unit * (theta_cur - theta_old_g - stab * x)
            x = solver(b)
            if not np.all(np.isfinite(x)):
                raise SolverError("non-finite iterate", history)
            cur = self.unpack(x)
        if not converged:
            raise SolverError(
                f"nonlinear iteration did not converge in {s.max_nl} iterations (last residual {history[-1]:.3e})",
                history,
            )
        if not monotone and s.strict:
            raise SolverError("nonlinear residual increased between iterations", history)
        new = cur
        f_heads = new if implicit else old
        led = self._ledger(old, new, tau, transm, f_heads, old, cross)
        if s.nonlinear == "l_scheme" and windows is not None:
            L_ok = all(
                bool(np.all(Lnode[p] >= ph.material.capacity(h) * (1 - 1e-12)))
                for p, ph in enumerate(self.phases)
                for h in (old[p], new[p])
            )
        else:
            L_ok = True
        if not L_ok and s.strict:
            raise SolverError("stabilisation L below the water capacity on the step's head range", history)
        return StepResult(new, it - 1, history, led, tau, L_ok, monotone)


def mass_balance(storage_prev, storage_new, fluxes, tau):
    """Ledger residual ``dS - tau * sum(fluxes)`` and its relative size."""
    fl = np.asarray(list(fluxes), dtype=float)
    res = (storage_new - storage_prev) - tau * float(np.sum(fl))
    scale = max(abs(storage_new), tau * float(np.sum(np.abs(fl))))
    return res, (abs(res) / scale if scale > 0 else 0.0)


def advance(problem: CoupledProblem, heads, t0, t_end, on_step=None):
    """Step from ``t0`` to ``t_end`` with adaptive tau; returns heads and a step log.

    On nonlinear failure tau is halved (up to ``max_halvings``); after three
    consecutive fast convergences it is doubled up to ``tau_max``.
    """
    s = problem.settings
    tau = s.tau
    t = t0
    fast = 0
    steps = []
    heads = problem.apply_dirichlet(heads)
    while t < t_end - 1e-12 * max(1.0, abs(t_end)):
        dt = min(tau, t_end - t)
        halvings = 0
        while True:
            try:
                res = problem.step(heads, dt)
                break
            except SolverError as err:
                halvings += 1
                if halvings > s.max_halvings:
                    raise SolverError(f"step at t={t:g} failed after {s.max_halvings} halvings", err.residuals) from err
                dt *= 0.5
                tau = dt
                fast = 0
                log.info("halving tau to %g at t=%g", dt, t)
        t = t + dt if t + dt < t_end else t_end
        heads = res.heads
        rec = {"t": t, "tau": dt, "iterations": res.iterations, "residual": res.residuals[-1],
               "monotone": res.monotone, "L_ok": res.L_ok, "ledger": res.ledger}
        steps.append(rec)
        if on_step is not None:
            on_step(t, heads, rec)
        if res.iterations <= s.fast_iterations and dt >= tau:
            fast += 1
            if fast >= 3 and tau < s.tau_ceiling:
                tau = min(2.0 * tau, s.tau_ceiling)
                fast = 0
        else:
            fast = 0
    return heads, steps


def with_scheme(settings: SolverSettings, **kw) -> SolverSettings:
    return replace(settings, **kw)
