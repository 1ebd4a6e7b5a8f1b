"""Norms between averaged micro fields and macro snapshots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import AlignmentError

TIME_TOL = 1e-9


@dataclass
class ConvergenceReport:
    """Per-ε error rows; ``monotone`` is true iff every error strictly decreases in ε."""

    eps: list
    rows: list = field(default_factory=list)
    runtimes: dict = field(default_factory=dict)
    monotone: bool | None = None

    def errors(self, eps, key):
        return [r[key] for r in self.rows if r["eps"] == eps]

    def times(self):
        return sorted({r["t"] for r in self.rows})

    def verdict(self, skip_initial=True) -> bool:
        """Strict decrease of L2 errors of both fields at each common time."""
        order = sorted(self.eps, reverse=True)
        ok = len(order) >= 2
        for t in self.times():
            if skip_initial and t == 0.0:
                continue
            for key in ("L2_S", "L2_P"):
                vals = [next(r[key] for r in self.rows if r["eps"] == e and r["t"] == t) for e in order]
                ok &= all(b < a for a, b in zip(vals, vals[1:]))
        self.monotone = bool(ok)
        return self.monotone

    def columns(self):
        keys = ("eps", "t", "L2_S", "L2_P", "Linf_S", "Linf_P")
        return {k: [r[k] for r in self.rows] for k in keys}


def field_norms(a, b, volumes):
    """Volume-weighted L2 (root-sum-square) and L-infinity of ``a - b``."""
    if np.shape(a) != np.shape(b) or np.shape(a) != np.shape(volumes):
        raise AlignmentError(f"field shapes differ: {np.shape(a)} vs {np.shape(b)} (volumes {np.shape(volumes)})")
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.sqrt(np.sum(volumes * d * d))), float(np.max(np.abs(d))) if d.size else 0.0


def compare(averaged, macro, volumes, eps=None):
    """Error rows for matching snapshot lists of ``(t, h_S, h_P)``.

    Raises :class:`AlignmentError` when times or grids do not match.
    """
    if len(averaged) != len(macro):
        raise AlignmentError(f"{len(averaged)} averaged snapshots vs {len(macro)} macro snapshots")
    rows = []
    for (ta, aS, aP), (tm, mS, mP) in zip(averaged, macro):
        if abs(ta - tm) > TIME_TOL * max(1.0, abs(tm)):
            raise AlignmentError(f"snapshot times differ: {ta} vs {tm}")
        l2s, lis = field_norms(aS, mS, volumes)
        l2p, lip = field_norms(aP, mP, volumes)
        rows.append({"eps": eps, "t": float(tm), "L2_S": l2s, "L2_P": l2p, "Linf_S": lis, "Linf_P": lip})
    return rows
