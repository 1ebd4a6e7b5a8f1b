"""Periodic unit-cell corrector problems and the homogenised soil tensor.

The cell Y = (0,1)^2 is discretised by an N x N grid of cell-centred finite
volumes.  Root cells carry zero conductivity, so the harmonic face average
switches their faces off and the no-flux condition on the root surface is
recovered.  Labels: 0 = root (P), 1 = rhizosphere (R), 2 = bulk soil (B).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, SolverError, TableRangeError
from .linalg import pcg

ROOT, RHIZO, BULK = 0, 1, 2


@dataclass(frozen=True)
class UnitCellGeometry:
    """Root disk of radius ``r_P`` inside a rhizosphere disk of radius ``r_R``.

    In ``laminate`` mode the three phases become strips along y1 with the
    same area fractions (or explicit ``fractions`` = (root, rhizosphere, bulk)).
    """

    r_P: float
    r_R: float
    N: int
    mode: str = "disk"
    fractions: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.mode not in ("disk", "laminate"):
            raise GeometryError(f"unknown cell mode {self.mode!r}")
        if self.N < 16:
            raise GeometryError("unit-cell grid needs N >= 16")
        if self.fractions is not None:
            fr = tuple(float(v) for v in self.fractions)
            if len(fr) != 3 or min(fr) < 0.0 or abs(sum(fr) - 1.0) > 1e-12:
                raise GeometryError("fractions must be three non-negative numbers summing to 1")
            object.__setattr__(self, "fractions", fr)
            return
        if not 0.0 <= self.r_P < self.r_R:
            raise GeometryError("need 0 <= r_P < r_R")
        if self.mode == "disk" and self.r_R >= 0.5 - 1.0 / self.N:
            raise GeometryError("rhizosphere disk must keep a one-cell margin inside the unit cell")

    @property
    def analytic_fractions(self) -> tuple[float, float, float]:
        if self.fractions is not None:
            return self.fractions
        p = math.pi * self.r_P**2
        r = math.pi * (self.r_R**2 - self.r_P**2)
        return (p, r, 1.0 - p - r)


@dataclass(frozen=True)
class CellClassification:
    labels: np.ndarray  # (N, N) int8
    faces: np.ndarray  # (F, 4): root cell (i, j), neighbour (i, j), periodic indices

    @property
    def N(self) -> int:
        return self.labels.shape[0]

    @property
    def fractions(self) -> tuple[float, float, float]:
        n2 = self.labels.size
        return tuple(float(np.count_nonzero(self.labels == k)) / n2 for k in (ROOT, RHIZO, BULK))

    @property
    def perimeter(self) -> float:
        """Staircase length of the root surface per unit cell."""
        return len(self.faces) / self.N


def _strip_labels(N, fractions):
    nP = int(round(fractions[0] * N))
    nR = int(round(fractions[1] * N))
    if nP + nR > N:
        raise GeometryError("strip fractions exceed the cell")
    col = np.full(N, BULK, dtype=np.int8)
    start = (N - nP) // 2
    col[start : start + nP] = ROOT
    left = nR - nR // 2
    col[start - left : start] = RHIZO
    col[start + nP : start + nP + nR // 2] = RHIZO
    return col


def classify_cell(geom: UnitCellGeometry) -> CellClassification:
    """Label grid cells by centre membership and list root-surface faces."""
    N = geom.N
    if geom.mode == "laminate":
        col = _strip_labels(N, geom.analytic_fractions)
        labels = np.repeat(col[:, None], N, axis=1)
    else:
        c = (np.arange(N) + 0.5) / N - 0.5
        d2 = c[:, None] ** 2 + c[None, :] ** 2
        labels = np.full((N, N), BULK, dtype=np.int8)
        labels[d2 < geom.r_R**2] = RHIZO
        labels[d2 < geom.r_P**2] = ROOT
    faces = []
    root = labels == ROOT
    for axis in (0, 1):
        for shift in (-1, 1):
            nb = np.roll(root, shift, axis=axis)
            ii, jj = np.nonzero(root & ~nb)
            ni = (ii - shift) % N if axis == 0 else ii
            nj = (jj - shift) % N if axis == 1 else jj
            faces.append(np.stack([ii, jj, ni, nj], axis=1))
    faces = np.concatenate(faces) if faces else np.zeros((0, 4), dtype=int)
    order = np.lexsort(faces.T[::-1])
    return CellClassification(labels=labels, faces=faces[order])


def _cell_conductivity(labels, rho, k_bulk):
    K = np.zeros(labels.shape)
    K[labels == RHIZO] = rho * k_bulk
    K[labels == BULK] = k_bulk
    return K


def _harmonic(a, b):
    s = a + b
    return np.where(s > 0.0, 2.0 * a * b / np.where(s > 0.0, s, 1.0), 0.0)


def _face_conductivities(K):
    return [_harmonic(K, np.roll(K, -1, axis=a)) for a in (0, 1)]


def _operator(Kf):
    def apply(w):
        out = np.zeros_like(w)
        for a in (0, 1):
            out += Kf[a] * (w - np.roll(w, -1, axis=a))
            out += np.roll(Kf[a], 1, axis=a) * (w - np.roll(w, 1, axis=a))
        return out

    return apply


def _fft_preconditioner(active, k_ref):
    """Inverse periodic Laplacian of a uniform medium, restricted to soil cells."""
    N = active.shape[0]
    s = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.fft.fftfreq(N))
    lam = k_ref * (s[:, None] + s[None, :])
    lam[0, 0] = 1.0

    def apply(r):
        f = np.fft.fft2(np.where(active, r, 0.0))
        f /= lam
        f[0, 0] = 0.0
        return np.where(active, np.fft.ifft2(f).real, 0.0)

    return apply


def solve_corrector(geom, rho, j, k_bulk=1.0, cls=None, rtol=1e-12, preconditioner="fft"):
    """Periodic mean-zero corrector ``w^j`` on the soil part of the cell.

    Returns the corrector (zero on root cells) and a dict with the CG
    iteration count, final relative residual and soil mean.
    """
    if rho <= 0.0:
        raise ValueError("contrast rho must be positive")
    if j not in (1, 2):
        raise ValueError("direction j must be 1 or 2")
    cls = classify_cell(geom) if cls is None else cls
    N = geom.N
    h = 1.0 / N
    K = _cell_conductivity(cls.labels, rho, k_bulk)
    Kf = _face_conductivities(K)
    a = j - 1
    b = h * (Kf[a] - np.roll(Kf[a], 1, axis=a))
    diag = Kf[0] + np.roll(Kf[0], 1, axis=0) + Kf[1] + np.roll(Kf[1], 1, axis=1)
    active = K > 0.0
    n_act = np.count_nonzero(active)

    def project(w):
        w = np.where(active, w, 0.0)
        return w - np.where(active, np.sum(w) / n_act, 0.0)

    apply = _operator(Kf)
    if preconditioner == "fft":
        prec = _fft_preconditioner(active, float(np.mean(K[active])))
    elif preconditioner == "jacobi":
        prec = None
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")
    w, info = pcg(apply, b, diag, rtol=rtol, maxiter=20 * N, project=project, precond=prec)
    r = b - apply(w)
    bn = np.sqrt(np.sum(b * b))
    info["residual"] = float(np.sqrt(np.sum(r * r)) / bn) if bn > 0 else 0.0
    info["mean"] = float(np.sum(w[active]) / n_act) if n_act else 0.0
    return w, info


def _energy_tensor(Kf, ws, N, k_bulk):
    grads = [[N * (np.roll(w, -1, axis=a) - w) for a in (0, 1)] for w in ws]
    A = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            s = 0.0
            for a in (0, 1):
                gi = (1.0 if i == a else 0.0) + grads[i][a]
                gj = (1.0 if j == a else 0.0) + grads[j][a]
                s += float(np.sum(Kf[a] * gi * gj))
            A[i, j] = s / (N * N * k_bulk)
    return A


def ahat(geom, rho, k_bulk=1.0, cls=None, return_info=False):
    """Normalised homogenised tensor ``K_hom / k_bulk`` at contrast ``rho``."""
    cls = classify_cell(geom) if cls is None else cls
    K = _cell_conductivity(cls.labels, rho, k_bulk)
    Kf = _face_conductivities(K)
    ws, infos = [], []
    for j in (1, 2):
        w, info = solve_corrector(geom, rho, j, k_bulk=k_bulk, cls=cls)
        ws.append(w)
        infos.append(info)
    A = _energy_tensor(Kf, ws, geom.N, k_bulk)
    return (A, infos) if return_info else A


def reuss_voigt(rho, fractions):
    """Harmonic and arithmetic means for phases {root: 0, R: rho, B: 1}."""
    fP, fR, fB = fractions
    voigt = fR * rho + fB
    reuss = 0.0 if fP > 0.0 else 1.0 / (fR / rho + fB)
    return reuss, voigt


@dataclass(frozen=True)
class EffectiveTable:
    rho_grid: np.ndarray
    ahat: np.ndarray  # (n, 2, 2)
    hole_fraction: float
    soil_fraction: float
    rhizo_fraction: float
    bulk_fraction: float
    perimeter: float
    info: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        if np.any(np.diff(self.rho_grid) <= 0.0):
            raise ValueError("rho grid must be strictly increasing")

    def at(self, rho):
        """Log-linear interpolation of the 2x2 tensor, no extrapolation."""
        rho = np.asarray(rho, dtype=float)
        lo, hi = self.rho_grid[0], self.rho_grid[-1]
        # relative slack absorbs roundoff at the table ends
        if np.any(rho < lo * (1 - 1e-12)) or np.any(rho > hi * (1 + 1e-12)):
            raise TableRangeError(
                f"contrast outside table range [{lo:g}, {hi:g}]: "
                f"[{float(np.min(rho)):g}, {float(np.max(rho)):g}]"
            )
        x = np.log(np.clip(rho, lo, hi))
        xs = np.log(self.rho_grid)
        out = np.empty(rho.shape + (2, 2))
        for i in range(2):
            for j in range(2):
                out[..., i, j] = np.interp(x, xs, self.ahat[:, i, j])
        return out

    @property
    def exchange_weights(self) -> tuple[float, float]:
        """(|Gamma_P|/|Y|, |Gamma_P|/|Y_P|)."""
        wg = self.perimeter
        return wg, (wg / self.hole_fraction if self.hole_fraction > 0 else 0.0)


def default_rho_grid(n=33, lo=1e-3, hi=1e3):
    return np.logspace(math.log10(lo), math.log10(hi), n)


def analytic_perimeter(geom: UnitCellGeometry) -> float:
    """Exact root-surface length per cell: 2 pi r_P for disks, 2 for a root strip."""
    if geom.mode == "laminate":
        return 2.0 if geom.analytic_fractions[0] > 0.0 else 0.0
    return 2.0 * math.pi * geom.r_P


def build_table(geom, rho_grid=None, threads=1, perimeter="staircase") -> EffectiveTable:
    """Solve all correctors on ``rho_grid`` (independent solves run in a pool).

    ``perimeter`` selects the exchange weight: the counted staircase face
    length (shared with the resolved model) or the exact curve length.
    """
    if perimeter not in ("staircase", "analytic"):
        raise ValueError(f"unknown perimeter mode {perimeter!r}")
    rho_grid = default_rho_grid() if rho_grid is None else np.asarray(rho_grid, dtype=float)
    cls = classify_cell(geom)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda r: ahat(geom, float(r), cls=cls, return_info=True), rho_grid))
    A = np.array([r[0] for r in results])
    fP, fR, fB = cls.fractions
    info = [
        {"rho": float(rho), "residuals": [i["residual"] for i in r[1]], "iterations": [i["iterations"] for i in r[1]]}
        for rho, r in zip(rho_grid, results)
    ]
    return EffectiveTable(
        rho_grid=rho_grid,
        ahat=A,
        hole_fraction=fP,
        soil_fraction=1.0 - fP,
        rhizo_fraction=fR,
        bulk_fraction=fB,
        perimeter=cls.perimeter if perimeter == "staircase" else analytic_perimeter(geom),
        info=info,
    )


def effective_tensor(h, rhizo, bulk, table: EffectiveTable):
    """3x3 homogenised soil conductivity ``K_S,hom(h)`` (shape ``h.shape + (3, 3)``)."""
    h = np.asarray(h, dtype=float)
    KR = rhizo.conductivity(h)
    KB = bulk.conductivity(h)
    A = table.at(KR / KB)
    out = np.zeros(h.shape + (3, 3))
    out[..., :2, :2] = KB[..., None, None] * A
    out[..., 2, 2] = table.rhizo_fraction * KR + table.bulk_fraction * KB
    return out


def check_bounds(table: EffectiveTable, atol=1e-12):
    """Symmetry and Reuss-Voigt checks per tabulated contrast."""
    rows = []
    fr = (table.hole_fraction, table.rhizo_fraction, table.bulk_fraction)
    for rho, A in zip(table.rho_grid, table.ahat):
        lo, hi = reuss_voigt(rho, fr)
        ev = np.linalg.eigvalsh(0.5 * (A + A.T))
        asym = float(np.max(np.abs(A - A.T)))
        ok = asym <= 1e-8 and ev.min() >= lo - atol * max(1.0, hi) and ev.max() <= hi + atol * max(1.0, hi)
        rows.append({"rho": float(rho), "asym": asym, "eig_min": float(ev[0]), "eig_max": float(ev[1]),
                     "reuss": lo, "voigt": hi, "ok": bool(ok)})
    return rows


__all__ = [
    "UnitCellGeometry",
    "CellClassification",
    "EffectiveTable",
    "classify_cell",
    "solve_corrector",
    "ahat",
    "build_table",
    "effective_tensor",
    "reuss_voigt",
    "check_bounds",
    "default_rho_grid",
    "SolverError",
]
