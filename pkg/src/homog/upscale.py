"""Homogenized-tensor approximations on a finite sampling box.

Four methods share the same mesh/filter machinery:

``parabolic``
    filtered average of a minus twice the time-integrated filtered
    correlation of the Dirichlet heat-type correctors, truncated at T.
``elliptic_standard``
    filtered flux average of the Dirichlet elliptic corrector.
``elliptic_regularized``
    as above with a zero-order term ``psi / T_reg`` added to the corrector
    equation and the symmetric energy form used for upscaling.
``periodic_reference``
    the classical unit-cell problem with periodic boundary conditions.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .coeffs import CoefficientField, make_constant
from .filters import FilterSpec
from .linsolve import ConvergenceError, cg_solve
from .mesh import (
    FemSystem,
    build_dirichlet_system,
    build_periodic_cell_system,
    assemble_stiffness,
    element_filter_weights,
)
from .parabolic import TimeOptions, evolve_and_integrate

__all__ = [
    "UpscaleResult",
    "ParameterChoice",
    "AdmissibilityWarning",
    "select_parameters",
    "parabolic_tensor",
    "elliptic_tensor_standard",
    "elliptic_tensor_regularized",
    "periodic_reference_tensor",
    "harmonic_mean_1d",
    "equivalence_check",
    "upscale",
    "METHODS",
]

log = logging.getLogger(__name__)

METHODS = ("parabolic", "elliptic_standard", "elliptic_regularized", "periodic_reference")


class AdmissibilityWarning(UserWarning):
    """Parameters outside the range covered by the convergence theorem."""


@dataclass
class UpscaleResult:
    a0: np.ndarray
    method: str
    R: float
    L: Optional[float] = None
    T: Optional[float] = None
    q: Optional[int] = None
    k_o: Optional[float] = None
    h: Optional[float] = None
    n_steps: int = 0
    walltime: float = 0.0
    dofs: int = 0
    matvec_count: int = 0
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ParameterChoice:
    L: float
    T: float
    k_o: float
    k_T: float
    lambda0_hat: float
    c_hat: float


def select_parameters(R: float, k_o: float, alpha: float, beta: float,
                      diam_K: float = math.sqrt(2.0)) -> ParameterChoice:
    """Averaging box and final time from the oversampling ratio.

    ``L = k_o R`` and ``T = k_T (R - L)`` with ``k_T = sqrt(c / (2 lambda0))``,
    ``lambda0 ~ alpha pi^2 / diam_K^2`` and ``c ~ 1 / (4 beta)``.
    """
    if not 0 < k_o < 1:
        raise ValueError("oversampling ratio k_o must lie in (0, 1)")
    if alpha <= 0 or beta < alpha:
        raise ValueError("need 0 < alpha <= beta")
    L = k_o * R
    lam = alpha * math.pi**2 / diam_K**2
    c = 1.0 / (4.0 * beta)
    k_T = math.sqrt(c / (2.0 * lam))
    if L >= R - 2:
        warnings.warn(f"L = {L:g} violates L < R - 2 (R = {R:g})", AdmissibilityWarning,
                      stacklevel=2)
    return ParameterChoice(L=L, T=k_T * (R - L), k_o=k_o, k_T=k_T, lambda0_hat=lam, c_hat=c)


def _symmetric(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _element_gradients(system: FemSystem, X: np.ndarray) -> np.ndarray:
    """Element-constant gradients of nodal fields ``X`` (shape ``(N, k)``) -> ``(E, k, d)``."""
    G = system.mesh.gradients()
    vals = X[system.mesh.node_index[system.mesh.elements]]  # (E, d+1, k)
    return np.einsum("eak,eaj->ejk", G, vals)


def _bounds(field: CoefficientField, alpha, beta):
    return (field.alpha if alpha is None else alpha), (field.beta if beta is None else beta)


def parabolic_tensor(field: CoefficientField, R: float, k_o: float, q: int, n_per_cell: int,
                     opts: TimeOptions = TimeOptions(), alpha: Optional[float] = None,
                     beta: Optional[float] = None, T: Optional[float] = None,
                     rho: Optional[float] = None) -> UpscaleResult:
    """Parabolic approximation ``a0 = avg_mu(a) - 2 int_0^T int u^i u^j mu``.

    ``T`` overrides the default final time from :func:`select_parameters`.
    """
    t0 = time.perf_counter()
    alpha, beta = _bounds(field, alpha, beta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AdmissibilityWarning)
        mesh_R = round(R * n_per_cell) / n_per_cell
        choice = select_parameters(mesh_R, k_o, alpha, beta, math.sqrt(field.dim))
    if choice.L >= mesh_R:
        raise ValueError("averaging box must be strictly inside the sampling box")
    T_final = choice.T if T is None else T
    _admissibility(mesh_R, choice.L, T_final, choice.c_hat, field.dim)
    spec = FilterSpec(q, choice.L, field.dim)
    system = build_dirichlet_system(field, mesh_R, n_per_cell, spec)
    a_nodes = field.evaluate(system.mesh.dof_coords)
    avg = np.einsum("n,nij->ij", system.M_filtered, a_nodes)
    evo = evolve_and_integrate(system, T_final, opts, rho=rho)
    a0 = _symmetric(avg - 2.0 * evo.J)
    return UpscaleResult(
        a0=a0, method="parabolic", R=mesh_R, L=choice.L, T=T_final, q=q, k_o=k_o,
        h=system.mesh.h, n_steps=evo.n_steps, walltime=time.perf_counter() - t0,
        dofs=int((~system.mesh.boundary_mask).sum()), matvec_count=evo.matvecs,
        extra={"average": avg, "J": evo.J, "evolution": evo, "tol_t": evo.tol_t,
               "rho": evo.rho, "k_T": choice.k_T},
    )


def _admissibility(R, L, T, c_hat, d):
    R_tilde = R - 1.0
    if T >= (2 * c_hat / d) * (R_tilde - L) ** 2:
        warnings.warn(f"T = {T:.4g} >= (2 nu/d)(R~ - L)^2 (nu ~ 1/(4 beta))",
                      AdmissibilityWarning, stacklevel=3)
    if T >= R - L:
        warnings.warn(f"T = {T:.4g} >= R - L", AdmissibilityWarning, stacklevel=3)


def _solve_correctors(system: FemSystem, A, tol, maxit, project_mass=None):
    d = system.b.shape[0]
    X = np.zeros((system.mesh.n_dofs, d))
    its = 0
    if maxit is None and system.mesh.d == 1:
        # 1D condition numbers grow like N^2, so 20 sqrt(N) iterations are too few
        maxit = 2 * system.mesh.n_dofs
    for j in range(d):
        x, rep = cg_solve(A, system.b[j], tol=tol, maxit=maxit, precond="jacobi",
                          project_mass=project_mass)
        if not rep.converged:
            raise ConvergenceError(f"corrector {j} did not converge", rep)
        X[:, j] = x
        its += rep.iterations
    return X, its


def elliptic_tensor_standard(field: CoefficientField, R: float, k_o: float, q: int,
                             n_per_cell: int, tol: float = 1e-10,
                             maxit: Optional[int] = None) -> UpscaleResult:
    """Filtered flux average ``int e_i . a (e_j + grad chi^j) mu_L``.

    The element-wise rule uses the barycentric coefficient, the constant
    corrector gradient and the vertex-averaged filter weight.  The flux
    average is not exactly symmetric in (i, j); the symmetric part is
    returned and the raw matrix kept in ``extra["raw"]``.
    """
    t0 = time.perf_counter()
    mesh_R = round(R * n_per_cell) / n_per_cell
    L = k_o * mesh_R
    spec = FilterSpec(q, L, field.dim)
    system = build_dirichlet_system(field, mesh_R, n_per_cell)
    chi, its = _solve_correctors(system, system.A, tol, maxit)
    grads = _element_gradients(system, chi)  # (E, d_dir, d)
    w = element_filter_weights(system.mesh, spec)
    d = field.dim
    flux = system.tensors[:, :, :] @ (np.eye(d)[None, :, :] + grads.transpose(0, 2, 1))
    raw = np.einsum("e,eij->ij", w, flux)
    return UpscaleResult(
        a0=_symmetric(raw), method="elliptic_standard", R=mesh_R, L=L, q=q, k_o=k_o,
        h=system.mesh.h, walltime=time.perf_counter() - t0,
        dofs=int((~system.mesh.boundary_mask).sum()), matvec_count=its + d,
        extra={"raw": raw, "correctors": chi, "system": system},
    )


def elliptic_tensor_regularized(field: CoefficientField, R: float, k_o: float, q: int,
                                T_reg: Optional[float], n_per_cell: int, tol: float = 1e-10,
                                maxit: Optional[int] = None) -> UpscaleResult:
    """Zero-order regularised correctors, upscaled with the energy form.

    ``T_reg`` defaults to ``(R - L)^2``.
    """
    t0 = time.perf_counter()
    mesh_R = round(R * n_per_cell) / n_per_cell
    L = k_o * mesh_R
    if T_reg is None:
        T_reg = (mesh_R - L) ** 2
    if T_reg <= 0:
        raise ValueError("T_reg must be positive")
    spec = FilterSpec(q, L, field.dim)
    system = build_dirichlet_system(field, mesh_R, n_per_cell)
    shift = np.where(system.mesh.boundary_mask, 0.0, system.M_lump / T_reg)
    A_reg = (system.A + sp.diags(shift)).tocsr()
    psi, its = _solve_correctors(system, A_reg, tol, maxit)
    d = field.dim
    grads = np.eye(d)[None, :, :] + _element_gradients(system, psi)  # (E, i, k)
    w = element_filter_weights(system.mesh, spec)
    a0 = np.einsum("e,eik,ekl,ejl->ij", w, grads, system.tensors, grads)
    return UpscaleResult(
        a0=_symmetric(a0), method="elliptic_regularized", R=mesh_R, L=L, T=T_reg, q=q,
        k_o=k_o, h=system.mesh.h, walltime=time.perf_counter() - t0,
        dofs=int((~system.mesh.boundary_mask).sum()), matvec_count=its + d,
        extra={"correctors": psi},
    )


def periodic_reference_tensor(field: CoefficientField, n_per_cell: int, tol: float = 1e-11,
                              maxit: Optional[int] = None) -> UpscaleResult:
    """Unit-cell homogenized tensor ``int_K e_i . a (e_j + grad chi^j)``."""
    t0 = time.perf_counter()
    system = build_periodic_cell_system(n_per_cell, field)
    if maxit is None:
        maxit = max(1000, 40 * n_per_cell ** field.dim)
    chi, its = _solve_correctors(system, system.A, tol, maxit, project_mass=system.M_lump)
    grads = _element_gradients(system, chi)
    d = field.dim
    vol = system.mesh.volumes
    flux = system.tensors @ (np.eye(d)[None, :, :] + grads.transpose(0, 2, 1))
    raw = np.einsum("e,eij->ij", vol, flux) / vol.sum()
    return UpscaleResult(
        a0=_symmetric(raw), method="periodic_reference", R=1.0, h=system.mesh.h,
        walltime=time.perf_counter() - t0, dofs=system.mesh.n_dofs, matvec_count=its + d,
        extra={"raw": raw, "correctors": chi},
    )


def harmonic_mean_1d(profile: Callable[[np.ndarray], np.ndarray], n_quad: int = 64,
                     tol: float = 1e-12, max_points: int = 1 << 22) -> float:
    """``(int_0^1 1/profile)^-1`` by the periodic trapezoid rule, doubled until stable."""
    n = max(2, n_quad)
    prev = None
    while True:
        x = np.arange(n) / n
        val = 1.0 / np.mean(1.0 / np.asarray(profile(x), dtype=float))
        if prev is not None and abs(val - prev) <= tol * abs(val):
            return float(val)
        if n >= max_points:
            return float(val)
        prev = val
        n *= 2


def equivalence_check(field: CoefficientField, R: float, n_per_cell: int, T_long: float,
                      opts: TimeOptions = TimeOptions(mode="fixed", n_steps=1024),
                      floor: float = 1e-8):
    """Compare elliptic correctors with time integrals of the parabolic states.

    Returns ``(r1, r2)``: the relative discrete H1 distance between
    ``chi`` and ``int_0^T u dt``, and the relative gap between
    ``chi_i . A chi_j / 2`` and ``int_0^T int u^i u^j``.
    """
    system = build_dirichlet_system(field, R, n_per_cell)
    d = field.dim
    chi, _ = _solve_correctors(system, system.A, 1e-12, None)
    evo = evolve_and_integrate(system, T_long, opts, weight=system.M_lump,
                               integrate_state=True)
    init = evo.decay[0]
    last = evo.decay[-1]
    active = init > 0
    if np.any(last[active] > floor * init[active]):
        raise ValueError("decay floor not reached: increase T_long")
    if not active.any():
        return 0.0, 0.0
    # discrete H1 norm uses the Laplacian stiffness plus lumped mass
    lap = assemble_stiffness(system.mesh, make_constant(1.0, d))
    H = lap + sp.diags(system.M_lump)
    diff = chi - evo.state_integral
    num = np.sqrt(np.einsum("nk,nk->k", diff, H @ diff))
    den = np.sqrt(np.einsum("nk,nk->k", chi, H @ chi))
    r1 = float(np.max(num[active] / den[active]))
    energy = 0.5 * chi.T @ (system.A @ chi)
    gap = np.abs(energy - evo.J)
    scale = np.sqrt(np.outer(np.diag(energy), np.diag(energy)))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, gap / scale, 0.0)
    r2 = float(np.max(rel))
    return r1, r2


def upscale(method: str, field: CoefficientField, R: float, k_o: float, q: int,
            n_per_cell: int, opts: TimeOptions = TimeOptions(), t_reg: Optional[float] = None,
            tol: float = 1e-10, alpha: Optional[float] = None,
            beta: Optional[float] = None, maxit: Optional[int] = None) -> UpscaleResult:
    """Dispatch by method name."""
    if method == "parabolic":
        return parabolic_tensor(field, R, k_o, q, n_per_cell, opts, alpha=alpha, beta=beta)
    if method == "elliptic_standard":
        return elliptic_tensor_standard(field, R, k_o, q, n_per_cell, tol=tol, maxit=maxit)
    if method == "elliptic_regularized":
        return elliptic_tensor_regularized(field, R, k_o, q, t_reg, n_per_cell, tol=tol,
                                           maxit=maxit)
    if method == "periodic_reference":
        return periodic_reference_tensor(field, n_per_cell)
    raise ValueError(f"unknown method {method!r}")
