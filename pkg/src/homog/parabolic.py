"""Explicit stabilized time integration of the Dirichlet heat-type cell problems.

The semi-discrete system is ``M u' = -A u`` with lumped (diagonal) ``M``.
Time stepping uses the damped second-order Runge-Kutta-Chebyshev scheme
(RKC2).  While the states evolve, the filtered correlations
``q_ij(t) = u^i(t) . M_filtered u^j(t)`` are sampled at every node and
integrated in time with the unequal-interval Simpson rule.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .linsolve import estimate_spectral_radius
from .mesh import FemSystem

__all__ = [
    "TimeOptions",
    "Evolution",
    "TimeStepError",
    "initial_condition",
    "select_stages",
    "stability_boundary",
    "rkc_step",
    "simpson_nonuniform",
    "SimpsonAccumulator",
    "HeatOperator",
    "evolve_and_integrate",
    "default_n_steps",
    "fixed_time_grid",
]

#: slope of the damped RKC2 stability boundary, beta(s) ~ 0.653 s^2
STABILITY_SLOPE = 0.653


class TimeStepError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TimeOptions:
    """Time-integration settings.

    ``n_steps`` and ``tol_t`` default to ``None`` which means: derive from the
    problem (see :func:`default_n_steps`; ``tol_t = h^2 / 10``).
    """

    mode: str = "fixed"
    n_steps: Optional[int] = None
    tol_t: Optional[float] = None
    damping: float = 0.05

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown time mode {self.mode!r}")
        if self.n_steps is not None and (self.n_steps < 2 or self.n_steps % 2):
            raise ValueError("n_steps must be a positive even integer")
        if self.tol_t is not None and self.tol_t <= 0:
            raise ValueError("tol_t must be positive")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")


def default_n_steps(T: float, rho: float) -> int:
    n = max(64, math.ceil(8 * T * math.sqrt(rho)))
    n = min(n, 4096)
    return n + (n % 2)


def grading_exponent(T: float, rho: float) -> float:
    """Exponent of the graded grid; depends on ``T rho`` only, not on n."""
    return max(1e-8, math.log1p(T * rho))


def fixed_time_grid(T: float, n: int, rho: float) -> np.ndarray:
    """Geometrically graded nodes ``t_k = T (e^{g k/n} - 1) / (e^g - 1)``.

    The rough initial data excite modes up to the spectral radius; the graded
    grid resolves them while they are alive and stretches the step once only
    the slow modes remain.  The map is fixed for given ``T rho`` so halving
    the step refines the same grid.
    """
    g = grading_exponent(T, rho)
    sigma = np.arange(n + 1) / n
    t = T * np.expm1(g * sigma) / math.expm1(g)
    t[-1] = T
    return t


def select_stages(dt: float, rho_hat: float, damping: float = 0.05) -> int:
    """Smallest ``s >= 2`` with ``dt * rho_hat <= 0.653 s^2``."""
    if dt <= 0 or rho_hat <= 0:
        raise ValueError("dt and rho_hat must be positive")
    z = dt * rho_hat
    s = max(2, math.ceil(math.sqrt(z / STABILITY_SLOPE)))
    while STABILITY_SLOPE * s * s < z:
        s += 1
    while s > 2 and STABILITY_SLOPE * (s - 1) ** 2 >= z:
        s -= 1
    return s


@functools.lru_cache(maxsize=None)
def _rkc_coefficients(s: int, damping: float):
    w0 = 1.0 + damping / s**2
    T = np.zeros(s + 1)
    dT = np.zeros(s + 1)
    d2T = np.zeros(s + 1)
    T[0], T[1] = 1.0, w0
    dT[1] = 1.0
    for j in range(2, s + 1):
        T[j] = 2 * w0 * T[j - 1] - T[j - 2]
        dT[j] = 2 * T[j - 1] + 2 * w0 * dT[j - 1] - dT[j - 2]
        d2T[j] = 4 * dT[j - 1] + 2 * w0 * d2T[j - 1] - d2T[j - 2]
    w1 = dT[s] / d2T[s]
    b = np.empty(s + 1)
    b[2:] = d2T[2:] / dT[2:] ** 2
    b[0] = b[1] = b[2]
    a = 1.0 - b * T
    mu = np.zeros(s + 1)
    nu = np.zeros(s + 1)
    mut = np.zeros(s + 1)
    gam = np.zeros(s + 1)
    mut[1] = b[1] * w1
    for j in range(2, s + 1):
        mu[j] = 2 * b[j] * w0 / b[j - 1]
        nu[j] = -b[j] / b[j - 2]
        mut[j] = 2 * b[j] * w1 / b[j - 1]
        gam[j] = -a[j - 1] * mut[j]
    return w0, w1, mu, nu, mut, gam, a[s], b[s]


def stability_boundary(s: int, damping: float = 0.05) -> float:
    """Exact length of the real stability interval of s-stage RKC2."""
    w0, w1 = _rkc_coefficients(s, damping)[:2]
    return (1.0 + w0) / w1


def stability_polynomial(z, s: int, damping: float = 0.05):
    """``R_s(z) = a_s + b_s T_s(w0 + w1 z)``."""
    w0, w1, *_, a_s, b_s = _rkc_coefficients(s, damping)
    x = w0 + w1 * np.asarray(z, dtype=float)
    return a_s + b_s * np.polynomial.chebyshev.chebval(x, [0] * s + [1])


def safe_stages(dt: float, rho: float, damping: float) -> int:
    """:func:`select_stages`, bumped until the exact stability interval covers dt*rho."""
    s = select_stages(dt, rho, damping)
    while stability_boundary(s, damping) < dt * rho:
        s += 1
    return s


def rkc_step(f: Callable[[np.ndarray], np.ndarray], u: np.ndarray, dt: float, s: int,
             damping: float = 0.05, f0: Optional[np.ndarray] = None) -> np.ndarray:
    """One RKC2 step of ``u' = f(u)`` with ``s`` stages.

    ``f`` is evaluated ``s`` times (``s - 1`` if ``f0 = f(u)`` is supplied).
    """
    if s < 2:
        raise ValueError("RKC2 needs at least two stages")
    _, _, mu, nu, mut, gam, _, _ = _rkc_coefficients(s, damping)
    y0 = u
    F0 = f(y0) if f0 is None else f0
    y_prev2 = y0
    # overflow is reported below as a step failure rather than as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        y_prev = y0 + (mut[1] * dt) * F0
        for j in range(2, s + 1):
            y = (1.0 - mu[j] - nu[j]) * y0 + mu[j] * y_prev + nu[j] * y_prev2
            y += (mut[j] * dt) * f(y_prev)
            y += (gam[j] * dt) * F0
            y_prev2, y_prev = y_prev, y
    if not np.all(np.isfinite(y_prev)):
        raise TimeStepError("time step diverged (stage count too low)")
    return y_prev


def _simpson_pair(t0, t1, t2, v0, v1, v2):
    h0, h1 = t1 - t0, t2 - t1
    hs = h0 + h1
    return (hs / 6.0) * ((2.0 - h1 / h0) * v0 + (hs * hs / (h0 * h1)) * v1 + (2.0 - h0 / h1) * v2)


class SimpsonAccumulator:
    """Running unequal-interval Simpson integral over streamed samples.

    Samples are consumed in pairs of intervals; an unpaired last interval
    is closed with the trapezoid rule by :attr:`value`.
    """

    def __init__(self):
        self._closed = None
        self._pending: list = []  # (t, v) of the currently open pair, first = anchor

    def add(self, t: float, v) -> None:
        v = np.array(v, dtype=float, copy=True)
        if self._pending and t <= self._pending[-1][0]:
            raise ValueError("sample times must be strictly increasing")
        self._pending.append((float(t), v))
        if len(self._pending) == 3:
            (t0, v0), (t1, v1), (t2, v2) = self._pending
            part = _simpson_pair(t0, t1, t2, v0, v1, v2)
            self._closed = part if self._closed is None else self._closed + part
            self._pending = [self._pending[-1]]

    @property
    def value(self):
        if self._closed is None and len(self._pending) < 2:
            raise ValueError("need at least two samples")
        total = 0.0 if self._closed is None else self._closed
        if len(self._pending) == 2:
            (t0, v0), (t1, v1) = self._pending
            total = total + 0.5 * (t1 - t0) * (v0 + v1)
        return total


def simpson_nonuniform(samples: Sequence) -> float:
    """Integrate ``(t, v)`` samples with the unequal-interval Simpson rule.

    Exact for quadratics whenever the number of samples is odd.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    acc = SimpsonAccumulator()
    for t, v in samples:
        acc.add(t, v)
    return acc.value


class HeatOperator:
    """``f(U) = -M^-1 A U`` with Dirichlet rows pinned to zero; counts matvecs."""

    def __init__(self, A, M: np.ndarray, boundary: Optional[np.ndarray] = None):
        self.A = A
        self.inv_mass = 1.0 / np.asarray(M, dtype=float)
        self.boundary = boundary if boundary is not None and boundary.any() else None
        self.matvecs = 0
        if self.boundary is not None:
            self.inv_mass = np.where(self.boundary, 0.0, self.inv_mass)

    def __call__(self, U: np.ndarray) -> np.ndarray:
        self.matvecs += 1 if U.ndim == 1 else U.shape[1]
        out = self.A @ U
        if U.ndim == 1:
            return -out * self.inv_mass
        return -out * self.inv_mass[:, None]


def initial_condition(system: FemSystem, i: int) -> np.ndarray:
    """Discrete initial datum ``M^-1 b_i`` (zero on Dirichlet nodes)."""
    u0 = system.b[i] / system.M_lump
    if system.dirichlet:
        u0 = np.where(system.mesh.boundary_mask, 0.0, u0)
    return u0


@dataclass
class Evolution:
    """Outcome of :func:`evolve_and_integrate`.

    ``times``/``q`` hold the sampled filtered correlations, ``decay`` the
    lumped-mass norm of each direction state at the same times.
    """

    J: np.ndarray
    times: np.ndarray
    q: np.ndarray
    decay: np.ndarray
    n_steps: int
    rejected: int
    matvecs: int
    rho: float
    tol_t: Optional[float] = None
    state_integral: Optional[np.ndarray] = None
    full_mass_J: Optional[np.ndarray] = None
    stage_counts: List[int] = field(default_factory=list)


def _mass_norms(U, M):
    return np.sqrt(np.einsum("nd,n,nd->d", U, M, U))


def evolve_and_integrate(system: FemSystem, T: float, opts: TimeOptions = TimeOptions(),
                         rho: Optional[float] = None, integrate_state: bool = False,
                         weight: Optional[np.ndarray] = None,
                         full_mass_correlation: bool = False,
                         U0: Optional[np.ndarray] = None) -> Evolution:
    """Advance all direction states to ``T`` and integrate their correlations.

    Parameters
    ----------
    system : FemSystem
        Needs ``M_filtered`` unless ``weight`` is given.
    T : float
        Final time.
    opts : TimeOptions
    rho : float, optional
        Spectral-radius bound of ``M^-1 A``; estimated when omitted.
    integrate_state : bool
        Also return ``int_0^T U dt`` (used by the equivalence diagnostic).
    weight : ndarray, optional
        Diagonal weight used for the correlations instead of ``M_filtered``.
    full_mass_correlation : bool
        Also integrate ``U^T M_lump U``.
    U0 : ndarray, optional
        Initial states ``(N, d)``; defaults to :func:`initial_condition`.

    Returns
    -------
    Evolution
    """
    if T <= 0:
        raise ValueError("final time must be positive")
    W = system.M_filtered if weight is None else weight
    if W is None:
        raise ValueError("system has no filtered mass attached")
    M = system.M_lump
    boundary = system.mesh.boundary_mask if system.dirichlet else None
    op = HeatOperator(system.A, M, boundary)
    if rho is None:
        rho = estimate_spectral_radius(system.A, M)
    d = system.b.shape[0]
    if U0 is None:
        U = np.stack([initial_condition(system, i) for i in range(d)], axis=1)
    else:
        U = np.array(U0, dtype=float).reshape(len(M), -1)

    times: list = []
    qs: list = []
    decays: list = []
    accJ = SimpsonAccumulator()
    accU = SimpsonAccumulator() if integrate_state else None
    accF = SimpsonAccumulator() if full_mass_correlation else None

    def record(t, U):
        qm = U.T @ (W[:, None] * U)
        qm = 0.5 * (qm + qm.T)
        times.append(t)
        qs.append(qm)
        decays.append(_mass_norms(U, M))
        accJ.add(t, qm)
        if accU is not None:
            accU.add(t, U)
        if accF is not None:
            fm = U.T @ (M[:, None] * U)
            accF.add(t, 0.5 * (fm + fm.T))

    record(0.0, U)
    stages: list = []
    n_steps = 0
    rejected = 0
    tol = None
    if not np.any(U):
        # zero data stays zero; a single trapezoid node pair closes the integral
        record(T, U)
        n_steps = 1
    elif opts.mode == "fixed":
        n = opts.n_steps or default_n_steps(T, rho)
        grid = fixed_time_grid(T, n, rho)
        for k in range(1, n + 1):
            dt = grid[k] - grid[k - 1]
            s = safe_stages(dt, rho, opts.damping)
            U = rkc_step(op, U, dt, s, opts.damping)
            if boundary is not None:
                U[boundary] = 0.0
            record(grid[k], U)
            stages.append(s)
        n_steps = n
    else:
        tol = opts.tol_t if opts.tol_t is not None else system.mesh.h ** 2 / 10
        t = 0.0
        dt = min(T, 1.0 / rho)
        while t < T * (1 - 1e-14):
            dt = min(dt, T - t)
            F0 = op(U)
            s_full = safe_stages(dt, rho, opts.damping)
            s_half = safe_stages(dt / 2, rho, opts.damping)
            full = rkc_step(op, U, dt, s_full, opts.damping, f0=F0)
            mid = rkc_step(op, U, dt / 2, s_half, opts.damping, f0=F0)
            if boundary is not None:
                mid[boundary] = 0.0
            two = rkc_step(op, mid, dt / 2, s_half, opts.damping)
            if boundary is not None:
                two[boundary] = 0.0
            scale = _mass_norms(two, M)
            diff = _mass_norms(two - full, M) / 3.0
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(scale > 0, diff / (tol * scale), 0.0)
            err = float(np.max(ratios)) if ratios.size else 0.0
            if err <= 1.0:
                t_mid, t_new = t + dt / 2, (t + dt if T - (t + dt) > 1e-14 * T else T)
                record(t_mid, mid)
                record(t_new, two)
                U = two
                t = t_new
                n_steps += 1
                stages.append(s_half)
                fac = 2.0 if err == 0 else min(2.0, max(0.3, 0.9 * err ** (-1.0 / 3.0)))
            else:
                rejected += 1
                fac = max(0.2, 0.9 * err ** (-1.0 / 3.0))
            dt *= fac

    J = np.asarray(accJ.value, dtype=float).reshape(d, d)
    return Evolution(
        J=0.5 * (J + J.T),
        times=np.asarray(times),
        q=np.asarray(qs),
        decay=np.asarray(decays),
        n_steps=n_steps,
        rejected=rejected,
        matvecs=op.matvecs,
        rho=rho,
        tol_t=tol,
        state_integral=None if accU is None else accU.value,
        full_mass_J=None if accF is None else np.asarray(accF.value),
        stage_counts=stages,
    )
