"""Sparse linear algebra: Jacobi-preconditioned CG, zero-mean projection and
spectral-radius bounds for explicit time stepping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SolveReport",
    "ConvergenceError",
    "cg_solve",
    "project_zero_mean",
    "estimate_spectral_radius",
    "gershgorin_bound",
]


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, report: SolveReport):
        super().__init__(f"{message} ({report})")
        self.report = report


def project_zero_mean(x: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Remove the M-weighted mean: ``x - (sum M x / sum M) 1``."""
    M = np.asarray(M, dtype=float)
    total = M.sum()
    if total <= 0:
        raise ValueError("mass must have positive total")
    return x - np.dot(M, x) / total


def cg_solve(A, b: np.ndarray, tol: float = 1e-10, maxit: Optional[int] = None,
             precond: str = "jacobi", x0: Optional[np.ndarray] = None,
             project_mass: Optional[np.ndarray] = None, max_restarts: int = 3):
    """Preconditioned conjugate gradients for ``A x = b``.

    Parameters
    ----------
    A : sparse matrix or ndarray
        Symmetric positive (semi)definite.
    tol : float
        Target relative residual ``||b - A x|| / ||b||``.
    maxit : int, optional
        Defaults to ``20 sqrt(N)`` (at least 100).
    precond : {"jacobi", "none"}
    project_mass : ndarray, optional
        When given, iterates and search directions are kept M-mean free,
        which makes CG well defined on singular systems whose kernel is the
        constants (the periodic cell problem).  ``b`` must sum to zero.

    Returns
    -------
    x : ndarray
    report : SolveReport
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if maxit is None:
        maxit = max(100, int(20 * math.sqrt(n)))
    if precond == "jacobi":
        diag = np.asarray(A.diagonal(), dtype=float)
        if np.any(diag <= 0):
            raise ValueError("Jacobi preconditioner needs a positive diagonal")
        inv_diag = 1.0 / diag
    elif precond == "none":
        inv_diag = None
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")

    def proj(v):
        return v if project_mass is None else project_zero_mean(v, project_mass)

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, True)

    x = np.zeros_like(b) if x0 is None else proj(np.array(x0, dtype=float))
    it = 0
    res = np.inf
    # restart from the true residual when the recursive one drifts below tol
    for _ in range(max_restarts + 1):
        r = b - A @ x
        res = np.linalg.norm(r) / bnorm
        if res <= tol or it >= maxit:
            break
        z = proj(r * inv_diag if inv_diag is not None else r.copy())
        p = z.copy()
        rz = np.dot(r, z)
        while it < maxit:
            it += 1
            Ap = A @ p
            pAp = np.dot(p, Ap)
            if pAp <= 0:
                break
            step = rz / pAp
            x += step * p
            r -= step * Ap
            if np.linalg.norm(r) / bnorm <= tol:
                break
            z = proj(r * inv_diag if inv_diag is not None else r.copy())
            rz_new = np.dot(r, z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        x = proj(x)
    res = np.linalg.norm(b - A @ x) / bnorm
    return x, SolveReport(it, float(res), bool(res <= tol))


def gershgorin_bound(A, M: np.ndarray) -> float:
    """``max_i sum_j |A_ij| / M_ii``, an upper bound on rho(M^-1 A)."""
    if sp.issparse(A):
        rowsum = np.asarray(abs(A).sum(axis=1)).ravel()
    else:
        rowsum = np.abs(np.asarray(A)).sum(axis=1)
    M = np.asarray(M, dtype=float)
    if np.any(M <= 0):
        raise ValueError("mass must be positive")
    return float(np.max(rowsum / M))


def estimate_spectral_radius(A, M: np.ndarray, power_iterations: int = 20,
                             safety: float = 1.05, seed: int = 0) -> float:
    """Upper estimate of the spectral radius of ``M^-1 A``.

    Returns ``max(gershgorin, safety * power_estimate)``; the Gershgorin value
    alone is already a guaranteed bound, the power iteration only guards
    against rounding in pathological matrices.
    """
    bound = gershgorin_bound(A, M)
    if power_iterations <= 0:
        return bound
    M = np.asarray(M, dtype=float)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(len(M))
    lam = 0.0
    for _ in range(power_iterations):
        w = (A @ v) / M
        nrm = np.linalg.norm(w)
        if nrm == 0:
            break
        lam = nrm / np.linalg.norm(v)
        v = w / nrm
    return max(bound, safety * lam)
