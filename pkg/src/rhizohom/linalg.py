"""Jacobi-preconditioned conjugate gradients on numpy arrays of any shape."""

from __future__ import annotations

import numpy as np

from .errors import SolverError


def _dot(a, b):
    # pairwise numpy summation; stays bitwise stable regardless of BLAS threading
    return float(np.sum(a * b))


def pcg(apply_A, b, diag=None, x0=None, rtol=1e-12, maxiter=1000, project=None, precond=None):
    """Solve ``A x = b`` for symmetric positive (semi-)definite ``A``.

    Parameters
    ----------
    apply_A : callable
        Matrix-free operator.
    diag : ndarray, optional
        Jacobi preconditioner; entries <= 0 are treated as inactive and
        produce zero search components.
    precond : callable, optional
        Symmetric preconditioner ``r -> M^{-1} r``; overrides ``diag``.
    project : callable, optional
        Applied to the iterate after every update, e.g. to remove a
        nullspace component.

    Returns
    -------
    x, info : ndarray, dict
        ``info`` holds ``iterations`` and ``residual`` (relative).
    """
    if precond is None:
        inv = np.where(diag > 0.0, 1.0 / np.where(diag > 0.0, diag, 1.0), 0.0)

        def precond(r):
            return inv * r

    x = np.zeros_like(b) if x0 is None else x0.copy()
    if project is not None:
        x = project(x)
    bnorm = np.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return np.zeros_like(b), {"iterations": 0, "residual": 0.0}
    r = b - apply_A(x)
    z = precond(r)
    p = z.copy()
    rz = _dot(r, z)
    history = []
    for it in range(1, maxiter + 1):
        Ap = apply_A(p)
        pAp = _dot(p, Ap)
        if pAp <= 0.0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if project is not None:
            x = project(x)
        res = np.sqrt(_dot(r, r)) / bnorm
        history.append(res)
        if res <= rtol:
            # recompute the true residual to guard against drift in the recurrence
            r_true = b - apply_A(x)
            res_true = np.sqrt(_dot(r_true, r_true)) / bnorm
            if res_true <= 10 * rtol:
                return x, {"iterations": it, "residual": res_true}
            r = r_true
        z = precond(r)
        rz_new = _dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"CG did not converge in {maxiter} iterations (residual {history[-1] if history else np.nan:.3e})",
        history,
    )
