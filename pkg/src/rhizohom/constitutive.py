"""Retention, conductivity and surface-flux curves for soil and root tissue.

All curves are vectorised over ``h`` (pressure head, m).  Parameter bundles are
frozen dataclasses; invalid bundles raise ``ValueError`` at construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SoilHydraulics",
    "RootHydraulics",
    "SurfaceForcing",
    "Constitutive",
    "vg_factor",
    "vg_factor_derivative",
    "retention_primitive",
]


def _check_finite(h):
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise ValueError("pressure head must be finite")
    return h


def vg_factor(h, alpha, n):
    """(1 + |alpha h|^n)^(-m) with m = 1 - 1/n."""
    m = 1.0 - 1.0 / n
    return (1.0 + np.abs(alpha * h) ** n) ** (-m)


def vg_factor_derivative(h, alpha, n):
    """d/dh of :func:`vg_factor`; negative for h > 0, positive for h < 0."""
    m = 1.0 - 1.0 / n
    ah = np.abs(alpha * h)
    base = 1.0 + ah**n
    return -np.sign(h) * m * n * abs(alpha) * ah ** (n - 1.0) * base ** (-m - 1.0)


@dataclass(frozen=True)
class SoilHydraulics:
    """Van Genuchten-Mualem soil with the saturated-branch extension."""

    theta_res: float
    theta_sat: float
    alpha: float
    n: float
    K_sat: float
    l: float = 0.5
    delta: float | None = None
    m: float = field(init=False)

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", 1e-2 * (self.theta_sat - self.theta_res))
        object.__setattr__(self, "m", 1.0 - 1.0 / self.n)
        if not 0.0 <= self.theta_res < self.theta_sat <= 1.0:
            raise ValueError("need 0 <= theta_res < theta_sat <= 1")
        if self.n <= 1.0:
            raise ValueError("van Genuchten n must exceed 1")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.K_sat <= 0.0:
            raise ValueError("K_sat must be positive")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive; unregularised conductivity is not supported")
        if self.delta >= (self.theta_sat - self.theta_res) / 10.0:
            raise ValueError("delta must be below (theta_sat - theta_res)/10")

    # -- retention -------------------------------------------------------
    def theta(self, h):
        h = _check_finite(h)
        g = vg_factor(h, self.alpha, self.n)
        return np.where(
            h > 0.0,
            self.theta_sat + (1.0 - self.theta_sat) * (1.0 - g),
            self.theta_res + (self.theta_sat - self.theta_res) * g,
        )

    def capacity(self, h):
        h = _check_finite(h)
        dg = vg_factor_derivative(h, self.alpha, self.n)
        return np.where(h > 0.0, (self.theta_sat - 1.0) * dg, (self.theta_sat - self.theta_res) * dg)

    def theta_reg(self, h):
        """Regularised water content that drives the conductivity."""
        h = _check_finite(h)
        g = vg_factor(h, self.alpha, self.n)
        d = self.delta
        return np.where(
            h > 0.0,
            self.theta_sat - 0.5 * d + (1.0 - self.theta_sat) * (1.0 - g),
            self.theta_res + (self.theta_sat - self.theta_res - d) * g + 0.5 * d,
        )

    # -- conductivity ----------------------------------------------------
    def _mualem(self, se):
        m = self.m
        return self.K_sat * se**self.l * (1.0 - (1.0 - se ** (1.0 / m)) ** m) ** 2

    @property
    def se_top(self) -> float:
        return 1.0 - self.delta / (2.0 * (self.theta_sat - self.theta_res))

    @property
    def K0(self) -> float:
        """Lower conductivity bound, reached as h -> -inf."""
        return float(self._mualem(self.delta / (2.0 * (self.theta_sat - self.theta_res))))

    @property
    def K_top(self) -> float:
        """Constant conductivity on h >= 0."""
        return float(self._mualem(self.se_top))

    def conductivity(self, h):
        h = _check_finite(h)
        se = (self.theta_reg(np.minimum(h, 0.0)) - self.theta_res) / (self.theta_sat - self.theta_res)
        # clamp: rounding near h = 0 must not lift K above its saturated value
        se = np.where(h >= 0.0, self.se_top, np.minimum(se, self.se_top))
        return self._mualem(se)

    def capacity_sup(self) -> float:
        """Supremum of the water capacity (attained on the unsaturated branch)."""
        hs = -np.logspace(-6, 4, 4001) / self.alpha
        c = self.capacity(np.concatenate([hs, -hs]))
        return float(c.max())


@dataclass(frozen=True)
class RootHydraulics:
    """Root xylem retention (linear-elastic + Brooks-Corey) and anisotropic conductance."""

    theta_sat: float
    h_ae: float
    E: float
    lambda_P: float
    alpha: float
    n: float
    k_r: float
    k_ax: float
    r: float
    rho_g: float
    delta: float = 1e-3
    m: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "m", 1.0 - 1.0 / self.n)
        if self.h_ae >= 0.0:
            raise ValueError("air-entry head h_ae must be negative")
        if self.E <= 0.0 or self.lambda_P <= 0.0 or self.alpha <= 0.0:
            raise ValueError("E, lambda_P and alpha must be positive")
        if self.n <= 1.0:
            raise ValueError("n must exceed 1")
        if not 0.0 < self.theta_sat <= 1.0:
            raise ValueError("theta_sat must lie in (0, 1]")
        if self.theta_sat + self.h_ae / self.E <= 0.0:
            raise ValueError("theta_sat + h_ae/E must be positive")
        if not 0.0 < self.r < 0.5:
            raise ValueError("root radius fraction r must lie in (0, 1/2)")
        # k_r = 0 decouples root and soil; the axial path must stay open
        if self.k_r < 0.0 or self.rho_g <= 0.0 or self.k_ax <= 0.0:
            raise ValueError("need k_r >= 0, rho_g > 0 and k_ax > 0")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")

    @property
    def k_gamma(self) -> float:
        """Radial exchange coefficient k_r * rho * g."""
        return self.k_r * self.rho_g

    @property
    def theta_ae(self) -> float:
        return self.theta_sat + self.h_ae / self.E

    def theta(self, h):
        h = _check_finite(h)
        g = vg_factor(h, self.alpha, self.n)
        # ratio pinned to 1 off-branch keeps the discarded power law finite
        ratio = np.where(h < self.h_ae, h / self.h_ae, 1.0)
        bc = self.theta_ae * ratio ** (-self.lambda_P)
        return np.where(
            h > 0.0,
            self.theta_sat + (1.0 - self.theta_sat) * (1.0 - g),
            np.where(h >= self.h_ae, self.theta_sat + h / self.E, bc),
        )

    def capacity(self, h):
        h = _check_finite(h)
        dg = vg_factor_derivative(h, self.alpha, self.n)
        ratio = np.where(h < self.h_ae, h / self.h_ae, 1.0)
        dbc = -self.lambda_P * self.theta_ae * ratio ** (-self.lambda_P - 1.0) / self.h_ae
        return np.where(
            h > 0.0,
            (self.theta_sat - 1.0) * dg,
            np.where(h >= self.h_ae, 1.0 / self.E, dbc),
        )

    def theta_reg(self, h):
        """Regularised water content entering the conductivity factor."""
        h = _check_finite(h)
        ratio = np.where(h < self.h_ae, h / self.h_ae, 1.0)
        tail = self.theta_ae * ratio ** (-self.lambda_P) + self.delta * (
            1.0 - np.exp(np.minimum(h - self.h_ae, 0.0))
        )
        return np.where(h < self.h_ae, tail, self.theta(h))

    @property
    def kappa_ae(self) -> float:
        return (1.0 + self.h_ae / (self.theta_sat * self.E)) ** (2.0 / self.lambda_P + 1.0)

    def kappa(self, h):
        """Dimensionless conductivity factor, 1 on h >= 0."""
        h = _check_finite(h)
        p = 2.0 / self.lambda_P + 1.0
        ka = self.kappa_ae
        mid = ka + (1.0 - ka) * ((h - self.h_ae) / self.h_ae) ** 2
        ratio = np.where(h < self.h_ae, h / self.h_ae, 1.0)
        base = (1.0 + self.h_ae / (self.theta_sat * self.E)) * ratio ** (-self.lambda_P) + (
            self.delta / self.theta_sat
        ) * (1.0 - np.exp(np.minimum(h - self.h_ae, 0.0)))
        low = base**p
        return np.where(h >= 0.0, 1.0, np.where(h >= self.h_ae, mid, low))

    @property
    def kappa0(self) -> float:
        """Positive lower bound of kappa as h -> -inf."""
        return float((self.delta / self.theta_sat) ** (2.0 / self.lambda_P + 1.0))

    def horizontal_conductance(self, eps: float) -> float:
        return 2.0 * math.pi * eps * self.r * self.rho_g * self.k_r

    def vertical_conductance(self, L3: float) -> float:
        return self.k_ax * self.rho_g / L3

    def tensor(self, h, eps: float | None, L3: float):
        """Diagonal entries of the root conductivity tensor.

        With ``eps`` a positive number returns an array ``(..., 3)`` holding
        the two horizontal entries and the vertical entry.  With ``eps=None``
        (macroscopic limit) returns only the vertical entry.
        """
        kap = self.kappa(h)
        vert = self.vertical_conductance(L3) * kap
        if eps is None:
            return vert
        if eps <= 0.0:
            raise ValueError("eps must be positive")
        hor = self.horizontal_conductance(eps) * kap
        return np.stack([hor, hor, vert], axis=-1)

    def capacity_sup(self) -> float:
        hs = np.concatenate(
            [
                -np.logspace(-6, 4, 4001),
                np.logspace(-6, 4, 4001) / self.alpha,
                np.array([self.h_ae, 0.5 * self.h_ae]),
            ]
        )
        return float(self.capacity(hs).max())


def _smooth_ramp(x):
    """Non-increasing C1 step: 1 for x <= -1, 0 for x >= 0."""
    s = np.clip(-x, 0.0, 1.0)
    return 3.0 * s**2 - 2.0 * s**3


@dataclass(frozen=True)
class SurfaceForcing:
    """Top-boundary forcing: evaporation, precipitation, runoff, transpiration."""

    ET_o: float
    P: float
    C_RO: float
    K_cb: float
    Ke_max: float = 1.0
    Ke_scale: float = 1.0

    def __post_init__(self):
        if self.C_RO <= 0.0:
            raise ValueError("C_RO must be positive")
        if self.ET_o < 0.0 or self.P < 0.0 or self.K_cb < 0.0 or self.Ke_max < 0.0:
            raise ValueError("ET_o, P, K_cb and Ke_max must be non-negative")
        if self.Ke_scale <= 0.0:
            raise ValueError("Ke_scale must be positive")

    @property
    def T_pot(self) -> float:
        return self.K_cb * self.ET_o

    @property
    def runoff_max(self) -> float:
        return self.P / (1.0 - math.exp(-math.sqrt(self.C_RO)))

    @property
    def f_max(self) -> float:
        """Bound on |f| over all heads."""
        return self.Ke_max * self.ET_o + self.runoff_max

    def Ke(self, h):
        h = _check_finite(h)
        return self.Ke_max * (1.0 - _smooth_ramp(h / self.Ke_scale))

    def runoff(self, h):
        h = _check_finite(h)
        c = self.C_RO
        sc = math.sqrt(c)
        # exponent argument clipped to avoid overflow; RO is already 0 to double precision there
        expo = np.exp(np.minimum(-c * (h + 1.0 / sc), 700.0))
        return self.P / (1.0 - math.exp(-sc) + expo)

    def flux(self, h):
        """Outward water flux at the soil surface (positive = loss)."""
        return self.Ke(h) * self.ET_o - self.P + self.runoff(h)


@dataclass(frozen=True)
class Constitutive:
    """The three media plus forcing, addressed by medium letter R, B or P."""

    rhizosphere: SoilHydraulics
    bulk: SoilHydraulics
    root: RootHydraulics
    forcing: SurfaceForcing

    def medium(self, which: str):
        try:
            return {"R": self.rhizosphere, "B": self.bulk, "P": self.root}[which]
        except KeyError:
            raise ValueError(f"unknown medium {which!r}; expected R, B or P") from None

    def water_content(self, which: str, h, shifted: bool = False):
        med = self.medium(which)
        th = med.theta(h)
        return th - med.theta_sat if shifted else th

    def water_capacity(self, which: str, h):
        return self.medium(which).capacity(h)

    def conductivity_soil(self, which: str, h):
        if which not in ("R", "B"):
            raise ValueError("soil conductivity is defined for R or B")
        return self.medium(which).conductivity(h)

    def conductivity_root_scalar(self, h):
        return self.root.kappa(h)

    def root_tensor(self, h, eps: float | None, L3: float):
        return self.root.tensor(h, eps, L3)

    def retention_primitive(self, which: str, h):
        return retention_primitive(self.medium(which), h)

    def surface_flux(self, h):
        return self.forcing.flux(h)

    def runoff(self, h):
        return self.forcing.runoff(h)


# Gauss-Legendre nodes reused by the primitive integral
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def _side_primitive(medium, targets, sign, breaks):
    """Cumulative ``int_0^t z theta'(z) dz`` for ``targets`` on one side of 0.

    Panel edges are the union of the targets, a geometric grid towards the
    farthest target and the branch points, so one sweep serves all points.
    """
    a = float(np.max(np.abs(targets)))
    edges = np.concatenate(
        [[0.0], np.geomspace(a * 1e-10, a, 64), np.abs(targets), [abs(b) for b in breaks if 0.0 < sign * b < a]]
    )
    edges = np.unique(edges)
    lo, hi = sign * edges[:-1], sign * edges[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    z = mid[:, None] + half[:, None] * _GL_X[None, :]
    panel = np.sum(half[:, None] * _GL_W[None, :] * (z * medium.capacity(z)), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(panel)])
    return cum[np.searchsorted(edges, np.abs(targets))]


def retention_primitive(medium, h):
    """Energy primitive ``theta(h) h + int_h^0 theta(z) dz`` (shift invariant).

    Evaluated as ``int_0^h z theta'(z) dz`` with composite Gauss-Legendre
    panels, which is non-negative by construction.
    """
    h = _check_finite(h)
    breaks = [getattr(medium, "h_ae", 0.0)]
    flat = h.ravel()
    res = np.zeros(flat.shape)
    for sign in (-1.0, 1.0):
        sel = sign * flat > 0.0
        if np.any(sel):
            res[sel] = _side_primitive(medium, flat[sel], sign, breaks)
    out = res.reshape(h.shape)
    return out if out.ndim else float(out)
