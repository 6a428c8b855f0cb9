"""Coefficient fields a(x) for divergence-form elliptic operators.

Every field here is isotropic (a scalar times the identity), but the public
surface returns full symmetric tensors so downstream assembly never has to
care.  Fields are evaluated in vectorised form: ``field.evaluate(points)``
takes an ``(N, d)`` array and returns ``(N, d, d)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field as dc_field
from typing import Any, Callable, Optional

import numpy as np

__all__ = [
    "CoefficientField",
    "NotEllipticError",
    "eval_tensor",
    "make_constant",
    "make_gloria_lebris",
    "make_laminate_1d",
    "make_checkerboard",
    "make_lognormal",
    "make_custom",
    "ellipticity_bounds",
    "DEFAULT_SAMPLES",
]

KINDS = ("constant", "gloria_lebris", "laminate_1d", "checkerboard", "lognormal", "custom")

#: lattice points per unit length used when bounds are estimated by sampling
DEFAULT_SAMPLES = 512


class NotEllipticError(ValueError):
    """Raised when a sampled tensor has a non-positive eigenvalue."""


@dataclass(frozen=True)
class CoefficientField:
    """Symmetric tensor field on R^d with ellipticity bounds.

    Parameters
    ----------
    kind : str
        One of ``constant``, ``gloria_lebris``, ``laminate_1d``,
        ``checkerboard``, ``lognormal``, ``custom``.
    scalar : callable
        Vectorised map ``(N, d) -> (N,)``; the tensor is ``scalar(x) * Id``.
    dim : int
    alpha, beta : float
        Lower/upper ellipticity bounds (estimated by sampling when not known
        in closed form).
    period : float or None
        Cell period, ``None`` for non-periodic fields.
    params : dict
        Kind-specific parameters, kept for run metadata.
    """

    kind: str
    scalar: Callable[[np.ndarray], np.ndarray] = dc_field(repr=False, compare=False)
    dim: int = 2
    alpha: float = 1.0
    beta: float = 1.0
    period: Optional[float] = None
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")

    @property
    def is_periodic(self) -> bool:
        return self.period is not None

    def _wrap(self, x: np.ndarray) -> np.ndarray:
        if self.period is None:
            return x
        return np.mod(x, self.period)

    def evaluate_scalar(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {pts.shape[1]}")
        return np.asarray(self.scalar(self._wrap(pts)), dtype=float).reshape(len(pts))

    def evaluate(self, points) -> np.ndarray:
        """Tensors at ``points``, shape ``(N, d, d)``."""
        s = self.evaluate_scalar(points)
        return s[:, None, None] * np.eye(self.dim)[None, :, :]

    def with_bounds(self, alpha: float, beta: float) -> "CoefficientField":
        return dataclasses.replace(self, alpha=float(alpha), beta=float(beta))

    def shifted(self, c: float) -> "CoefficientField":
        """The field ``a + c Id`` (same kind metadata, bounds shifted)."""
        base = self.scalar
        params = dict(self.params, shift=self.params.get("shift", 0.0) + c)
        return dataclasses.replace(
            self,
            scalar=lambda x: base(x) + c,
            alpha=self.alpha + c,
            beta=self.beta + c,
            params=params,
        )


def eval_tensor(field: CoefficientField, x) -> np.ndarray:
    """a(x) at a single point as a ``(d, d)`` array."""
    return field.evaluate(np.asarray(x, dtype=float).reshape(1, -1))[0]


def _unit_box(dim: int):
    return [(0.0, 1.0)] * dim


def ellipticity_bounds(field: CoefficientField, n_samples_per_dim: int = DEFAULT_SAMPLES, box=None):
    """Sampled extreme eigenvalues of a(x) over a lattice on ``box``.

    ``box`` is a list of ``(lo, hi)`` intervals, or a scalar R meaning the
    centred cube ``[-R/2, R/2]^d``; the default is the unit cell.  The lattice
    has ``n_samples_per_dim`` points per unit length (at least that many in
    total per axis).  Returns ``(alpha_hat, beta_hat)``.
    """
    if n_samples_per_dim < 2:
        raise ValueError("n_samples_per_dim must be >= 2")
    if box is None:
        box = _unit_box(field.dim)
    elif np.isscalar(box):
        r = float(box)
        box = [(-r / 2, r / 2)] * field.dim
    axes = []
    for lo, hi in box:
        m = max(n_samples_per_dim, int(math.ceil(n_samples_per_dim * (hi - lo))))
        axes.append(np.linspace(lo, hi, m, endpoint=field.period is None))
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, field.dim)
    lo_all, hi_all = np.inf, -np.inf
    for chunk in np.array_split(grid, max(1, len(grid) // 262144)):
        eig = np.linalg.eigvalsh(field.evaluate(chunk))
        lo = eig[:, 0]
        if np.any(lo <= 0):
            bad = chunk[np.argmax(lo <= 0)]
            raise NotEllipticError(f"field not elliptic at x={bad.tolist()}")
        lo_all = min(lo_all, float(lo.min()))
        hi_all = max(hi_all, float(eig[:, -1].max()))
    return lo_all, hi_all


def make_constant(value: float = 1.0, dim: int = 2) -> CoefficientField:
    v = float(value)
    if v <= 0:
        raise ValueError("constant field must be positive")
    return CoefficientField(
        "constant",
        lambda x: np.full(len(x), v),
        dim=dim,
        alpha=v,
        beta=v,
        period=1.0,
        params={"value": v},
    )


def _gloria_lebris(x):
    s1, c1 = np.sin(2 * np.pi * x[:, 0]), np.cos(2 * np.pi * x[:, 0])
    s2, c2 = np.sin(2 * np.pi * x[:, 1]), np.cos(2 * np.pi * x[:, 1])
    return (2 + 1.8 * s1) / (2 + 1.8 * c2) + (2 + s2) / (2 + 1.8 * c1)


def make_gloria_lebris(n_samples: int = DEFAULT_SAMPLES) -> CoefficientField:
    """The smooth 1-periodic isotropic test tensor in two dimensions."""
    f = CoefficientField("gloria_lebris", _gloria_lebris, dim=2, period=1.0)
    return f.with_bounds(*ellipticity_bounds(f, n_samples))


def make_laminate_1d(profile: Callable[[np.ndarray], np.ndarray], dim: int = 2,
                     n_samples: int = DEFAULT_SAMPLES, name: str = "custom") -> CoefficientField:
    """Layered field ``profile(x_1) * Id`` with a 1-periodic ``profile``."""
    f = CoefficientField(
        "laminate_1d",
        lambda x: np.broadcast_to(np.asarray(profile(x[:, 0]), dtype=float), (len(x),)),
        dim=dim,
        period=1.0,
        params={"profile": name},
    )
    return f.with_bounds(*ellipticity_bounds(f, n_samples))


def make_checkerboard(c1: float, c2: float, dim: int = 2) -> CoefficientField:
    """Two-phase checkerboard on the unit cell.

    With the cell taken as ``[0, 1)^d`` split into half-width sub-cubes, the
    sub-cubes whose index sum is even carry ``c1`` and the others ``c2``; in
    2D that puts ``c1`` on the diagonal quarters.
    """
    if c1 <= 0 or c2 <= 0:
        raise ValueError("checkerboard values must be positive")

    def scalar(x):
        parity = np.floor(2 * x).astype(np.int64).sum(axis=1) % 2
        return np.where(parity == 0, c1, c2).astype(float)

    return CoefficientField(
        "checkerboard", scalar, dim=dim, alpha=min(c1, c2), beta=max(c1, c2),
        period=1.0, params={"c1": c1, "c2": c2},
    )


@dataclass(frozen=True)
class _FourierSeries:
    wavevectors: np.ndarray
    phases: np.ndarray
    amplitude: float

    def __call__(self, x):
        return self.amplitude * np.cos(x @ self.wavevectors.T + self.phases).sum(axis=1)


def make_lognormal(seed: int, n_modes: int = 64, sigma: float = 0.5, corr_len: float = 0.5,
                   dim: int = 2, bounds_box: Any = None,
                   n_samples: int = 64) -> CoefficientField:
    """exp(g) Id with g a random-phase truncated Fourier series.

    ``g(x) = sigma sqrt(2/n_modes) sum_m cos(k_m . x + phi_m)`` with
    ``k_m ~ N(0, corr_len^-2 Id)`` and ``phi_m ~ U[0, 2pi)``, drawn from
    ``numpy.random.default_rng(seed)``.  Bounds are sampled over
    ``bounds_box`` (default: the centred cube of edge 20).
    """
    if n_modes < 1 or sigma < 0 or corr_len <= 0:
        raise ValueError("need n_modes >= 1, sigma >= 0, corr_len > 0")
    rng = np.random.default_rng(seed)
    k = rng.normal(0.0, 1.0 / corr_len, size=(n_modes, dim))
    phi = rng.uniform(0.0, 2 * np.pi, size=n_modes)
    g = _FourierSeries(k, phi, sigma * math.sqrt(2.0 / n_modes))
    f = CoefficientField(
        "lognormal",
        lambda x: np.exp(g(x)),
        dim=dim,
        period=None,
        params={"seed": seed, "n_modes": n_modes, "sigma": sigma, "corr_len": corr_len,
                "wavevectors": k, "phases": phi, "log_field": g},
    )
    if bounds_box is None:
        bounds_box = 20.0
    return f.with_bounds(*ellipticity_bounds(f, n_samples, bounds_box))


def make_custom(scalar: Callable[[np.ndarray], np.ndarray], dim: int = 2,
                period: Optional[float] = None, n_samples: int = DEFAULT_SAMPLES,
                box=None) -> CoefficientField:
    f = CoefficientField("custom", scalar, dim=dim, period=period)
    return f.with_bounds(*ellipticity_bounds(f, n_samples, box))
