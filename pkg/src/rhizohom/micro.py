"""Resolved ε-periodic model: staircased root cylinders (3D) or root strips (2D).

The horizontal plane is tiled by ``L/eps`` copies of the rasterised unit
cell, each carrying ``N x N`` fine cells (``N`` strips in the strip analog).
Root columns form the root phase, rhizosphere and bulk columns the soil
phase; every soil/root face carries the interface flux
``eps k_Gamma (h_S - h_P)`` per unit area.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .cell import BULK, RHIZO, ROOT, UnitCellGeometry, analytic_perimeter, classify_cell
from .constitutive import Constitutive
from .errors import AlignmentError, GeometryError
from .solvercore import ColumnGrid, CoupledProblem, Phase, SolverSettings, advance

MIN_CELLS_ACROSS_ROOT = 4


class ResolutionError(GeometryError):
    """The fine grid does not resolve the root."""


def _tiles(L, eps):
    q = L / eps
    n = int(round(q))
    if n < 1 or abs(q - n) > 1e-9 * max(1.0, q):
        raise GeometryError(f"extent {L} is not an integer multiple of eps = {eps}")
    return n


@dataclass(frozen=True, eq=False)
class MicroGeometry:
    """Fine-grid description of the ε-periodic domain.

    ``labels`` has shape ``(n1, n2)``; every column shares its label over
    the full depth.  ``gamma_faces`` rows are ``(soil_col, root_col, axis)``
    with flat column indices into ``labels``.
    """

    eps: float
    dims: str
    L1: float
    L2: float
    L3: float
    nz: int
    cell: UnitCellGeometry
    labels: np.ndarray
    gamma_faces: np.ndarray
    tiles: tuple[int, int]

    @property
    def n1(self) -> int:
        return self.labels.shape[0]

    @property
    def n2(self) -> int:
        return self.labels.shape[1]

    @property
    def d1(self) -> float:
        return self.L1 / self.n1

    @property
    def d2(self) -> float:
        return self.L2 / self.n2

    def grid(self) -> ColumnGrid:
        return ColumnGrid(self.n1, self.n2, self.nz, self.d1, self.d2, self.L3)

    @property
    def root_mask(self) -> np.ndarray:
        return self.labels == ROOT

    @property
    def soil_mask(self) -> np.ndarray:
        return self.labels != ROOT

    @property
    def fractions(self) -> tuple[float, float, float]:
        n = self.labels.size
        return tuple(float(np.count_nonzero(self.labels == k)) / n for k in (ROOT, RHIZO, BULK))

    @property
    def interface_area_per_volume(self) -> float:
        """Staircase |Γ_P^ε| per unit volume (depth-independent)."""
        face = np.where(self.gamma_faces[:, 2] == 0, self.d2, self.d1) if len(self.gamma_faces) else np.zeros(0)
        return float(np.sum(face)) / (self.L1 * self.L2)

    @property
    def top_soil_columns(self) -> np.ndarray:
        return np.flatnonzero(self.soil_mask.ravel())

    @property
    def top_root_columns(self) -> np.ndarray:
        return np.flatnonzero(self.root_mask.ravel())

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.labels).tobytes())
        h.update(repr((self.eps, self.dims, self.L1, self.L2, self.L3, self.nz)).encode())
        return h.hexdigest()[:16]


def build_micro(eps, L1, L2, L3, cell: UnitCellGeometry, nz, dims="3D") -> MicroGeometry:
    """Tile the rasterised unit cell over the cross-section.

    ``dims="strip"`` builds the (x2, x3) analog: one column across x1 and
    the laminate strip pattern repeated along x2.
    """
    if eps <= 0.0:
        raise GeometryError("eps must be positive")
    if nz < 3:
        raise GeometryError("need at least 3 vertical nodes")
    N = cell.N
    if dims == "3D":
        if cell.mode != "disk":
            raise GeometryError("3D micro geometry needs a disk cell")
        if 0.0 < cell.r_P * N < MIN_CELLS_ACROSS_ROOT:
            raise ResolutionError(f"r_P resolved by {cell.r_P * N:.2f} < {MIN_CELLS_ACROSS_ROOT} cells")
        t1, t2 = _tiles(L1, eps), _tiles(L2, eps)
        unit = classify_cell(cell).labels
        labels = np.tile(unit, (t1, t2))
    elif dims == "strip":
        if cell.mode != "laminate":
            raise GeometryError("strip micro geometry needs a laminate cell")
        fP = cell.analytic_fractions[0]
        if 0.0 < fP * N < MIN_CELLS_ACROSS_ROOT:
            raise ResolutionError(f"root strip resolved by {fP * N:.2f} < {MIN_CELLS_ACROSS_ROOT} cells")
        t1, t2 = 1, _tiles(L2, eps)
        unit = classify_cell(cell).labels[:, 0]  # laminate pattern varies along y1
        labels = np.tile(unit, t2)[None, :]
    else:
        raise GeometryError(f"unknown micro dims {dims!r}")
    labels = np.ascontiguousarray(labels, dtype=np.int8)
    n1, n2 = labels.shape
    flat = np.arange(n1 * n2).reshape(n1, n2)
    faces = []
    for axis in (0, 1):
        a = labels[:-1, :] if axis == 0 else labels[:, :-1]
        b = labels[1:, :] if axis == 0 else labels[:, 1:]
        ia = flat[:-1, :] if axis == 0 else flat[:, :-1]
        ib = flat[1:, :] if axis == 0 else flat[:, 1:]
        m = (a == ROOT) & (b != ROOT)
        faces.append(np.stack([ib[m], ia[m], np.full(m.sum(), axis)], axis=1))
        m = (a != ROOT) & (b == ROOT)
        faces.append(np.stack([ia[m], ib[m], np.full(m.sum(), axis)], axis=1))
    faces = np.concatenate(faces).astype(np.int64)
    faces = faces[np.lexsort(faces.T[::-1])]
    return MicroGeometry(eps, dims, L1, L2, L3, nz, cell, labels, faces, (t1, t2))


# ----------------------------------------------------------------------
class _MicroSoil:
    """Rhizosphere or bulk curves selected per node by the column label."""

    def __init__(self, const: Constitutive, is_rhizo):
        self.R, self.B, self.isR = const.rhizosphere, const.bulk, is_rhizo
        self.capacity_sup = max(self.R.capacity_sup(), self.B.capacity_sup())

    def theta(self, h):
        return np.where(self.isR, self.R.theta(h), self.B.theta(h))

    def capacity(self, h):
        return np.where(self.isR, self.R.capacity(h), self.B.capacity(h))

    def conductivity(self, h):
        K = np.where(self.isR, self.R.conductivity(h), self.B.conductivity(h))
        return K, K, K


class _MicroRoot:
    def __init__(self, const: Constitutive, eps, L3):
        self.root, self.eps, self.L3 = const.root, eps, L3
        self.capacity_sup = self.root.capacity_sup()

    def theta(self, h):
        return self.root.theta(h)

    def capacity(self, h):
        return self.root.capacity(h)

    def conductivity(self, h):
        T = self.root.tensor(h, self.eps, self.L3)
        return T[..., 0], T[..., 1], T[..., 2]


@dataclass
class MicroState:
    """Heads on the fine grid, shape ``(n1, n2, nz)``; NaN outside the phase."""

    h_S: np.ndarray
    h_P: np.ndarray
    t: float = 0.0

    def copy(self):
        return MicroState(self.h_S.copy(), self.h_P.copy(), self.t)


class MicroModel:
    """Assembles the resolved coupled system on a :class:`MicroGeometry`."""

    def __init__(self, geom: MicroGeometry, const: Constitutive, settings: SolverSettings, a=0.0, interface="staircase"):
        if a > 0.0:
            raise GeometryError("root-bottom head a must be non-positive")
        if interface not in ("staircase", "analytic"):
            raise GeometryError(f"unknown interface mode {interface!r}")
        self.geom, self.const, self.settings, self.a = geom, const, settings, a
        g = geom.grid()
        self.grid = g
        nz = g.nz
        soil_cols = np.flatnonzero(geom.soil_mask.ravel())
        is_rhizo = np.repeat(geom.labels.ravel()[soil_cols] == RHIZO, nz)
        forcing = const.forcing
        soil = Phase("soil", geom.soil_mask, _MicroSoil(const, is_rhizo), 0.0, forcing.flux)
        T_pot = forcing.T_pot
        root = Phase(
            "root",
            geom.root_mask,
            _MicroRoot(const, geom.eps, geom.L3),
            a,
            lambda h: np.full(np.shape(h), T_pot),
        )
        F = geom.gamma_faces
        smap = -np.ones(g.n1 * g.n2, dtype=np.int64)
        smap[soil_cols] = np.arange(len(soil_cols))
        root_cols = np.flatnonzero(geom.root_mask.ravel())
        rmap = -np.ones(g.n1 * g.n2, dtype=np.int64)
        rmap[root_cols] = np.arange(len(root_cols))
        width = np.where(F[:, 2] == 0, g.d2, g.d1) if len(F) else np.zeros(0)
        coeff = geom.eps * const.root.k_gamma * width
        if interface == "analytic" and len(F):
            # rescale the staircase faces to the exact root-surface length
            coeff = coeff * analytic_perimeter(geom.cell) / classify_cell(geom.cell).perimeter
        self.interface = interface
        self.problem = CoupledProblem(
            g, [soil, root], (smap[F[:, 0]], rmap[F[:, 1]], coeff) if len(F) else None, settings
        )

    # ------------------------------------------------------------------
    def _heads(self, state):
        nz = self.grid.nz
        out = []
        for field, ph in zip((state.h_S, state.h_P), self.problem.phases):
            out.append(field.reshape(-1, nz)[ph.columns].ravel())
        return out

    def _state(self, heads, t):
        g = self.grid
        fields = []
        for h, ph in zip(heads, self.problem.phases):
            f = np.full((g.n1 * g.n2, g.nz), np.nan)
            f[ph.columns] = h.reshape(-1, g.nz)
            fields.append(f.reshape(g.n1, g.n2, g.nz))
        return MicroState(fields[0], fields[1], t)

    def initial_state(self, h_S, h_P) -> MicroState:
        """Broadcast profiles (length nz, or full fields) onto the phase columns."""
        g = self.grid
        shape = (g.n1, g.n2, g.nz)
        hs = np.broadcast_to(np.asarray(h_S, dtype=float), shape).copy()
        hp = np.broadcast_to(np.asarray(h_P, dtype=float), shape).copy()
        hs[..., 0] = 0.0
        hp[..., 0] = self.a
        hs[~self.geom.soil_mask] = np.nan
        hp[~self.geom.root_mask] = np.nan
        return MicroState(hs, hp, 0.0)

    def hydrostatic(self, offset_S=0.0, offset_P=None) -> MicroState:
        prof = -(self.grid.z + self.geom.L3)
        offset_P = self.a if offset_P is None else offset_P
        return self.initial_state(offset_S + prof, offset_P + prof)

    def step(self, state: MicroState, tau=None):
        res = self.problem.step(self._heads(state), tau)
        return self._state(res.heads, state.t + res.tau), res

    def run(self, state: MicroState, duration, snapshot_times=(), on_step=None):
        """Same contract as :meth:`MacroModel.run`."""
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
            snaps.append(self._state(heads, t))
        return self._state(heads, t), snaps, steps

    # ------------------------------------------------------------------
    def node_volumes(self):
        g = self.grid
        return np.broadcast_to(g.d1 * g.d2 * g.layer_thickness, (g.n1, g.n2, g.nz))

    def theta_fields(self, state: MicroState):
        soil = np.where(
            self.geom.labels[..., None] == RHIZO,
            self.const.rhizosphere.theta(np.nan_to_num(state.h_S)),
            self.const.bulk.theta(np.nan_to_num(state.h_S)),
        )
        soil = np.where(self.geom.soil_mask[..., None], soil, 0.0)
        root = np.where(self.geom.root_mask[..., None], self.const.root.theta(np.nan_to_num(state.h_P)), 0.0)
        return soil, root

    def contraction_metric(self, s1: MicroState, s2: MicroState) -> float:
        if s1.h_S.shape != s2.h_S.shape:
            raise AlignmentError("states live on different grids")
        vol = self.node_volumes()
        a_S, a_P = self.theta_fields(s1)
        b_S, b_P = self.theta_fields(s2)
        return float(np.sum(vol * np.maximum(a_S - b_S, 0.0)) + np.sum(vol * np.maximum(a_P - b_P, 0.0)))


def average_to_macro(state: MicroState, geom: MicroGeometry, n1, n2, nz):
    """Phase averages of the micro heads over an aligned macro grid.

    Returns ``(h_S_bar, h_P_bar, flags)``, each head of shape ``(n1, n2, nz)``;
    ``flags`` marks macro cells without root cells, which take the value of
    the nearest macro column that has them.
    """
    if nz != geom.nz:
        raise AlignmentError(f"macro grid has {nz} vertical nodes, micro has {geom.nz}")
    if geom.dims == "strip" and n1 != 1:
        raise AlignmentError("strip geometry only supports n1 = 1")
    for n, L, fine, tiles in ((n1, geom.L1, geom.n1, geom.tiles[0]), (n2, geom.L2, geom.n2, geom.tiles[1])):
        if n < 1 or tiles % n:
            raise AlignmentError(f"{n} macro cells do not align with {tiles} eps-cells over length {L}")
    b1, b2 = geom.n1 // n1, geom.n2 // n2

    def block_mean(field, mask):
        f = np.where(mask[..., None], field, 0.0).reshape(n1, b1, n2, b2, nz)
        c = mask.reshape(n1, b1, n2, b2).sum(axis=(1, 3))
        s = f.sum(axis=(1, 3))
        with np.errstate(invalid="ignore", divide="ignore"):
            return s / c[..., None], c

    hS, cS = block_mean(state.h_S, geom.soil_mask)
    hP, cP = block_mean(state.h_P, geom.root_mask)
    flags = cP == 0
    if flags.any() and (~flags).any():
        good = np.argwhere(~flags)
        for i, j in np.argwhere(flags):
            k = np.argmin((good[:, 0] - i) ** 2 + (good[:, 1] - j) ** 2)
            hP[i, j] = hP[tuple(good[k])]
    return hS, hP, flags
