"""Order-q averaging kernels on the cube K_L = [-L/2, L/2]^d.

The 1D kernel is ``mu(x) = c_q (1 - 4x^2)^q`` on ``[-1/2, 1/2]``; it and its
first ``q - 1`` derivatives vanish at the endpoints.  ``q = 0`` is the plain
box average.  The d-dimensional kernel is the scaled tensor product
``mu_L(x) = L^-d prod_k mu(x_k / L)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["FilterSpec", "filter_normalization", "filter_weight", "averaging_error_probe"]


def filter_normalization(q: int) -> float:
    """Constant ``c_q`` giving ``c_q (1 - 4x^2)^q`` unit mass on [-1/2, 1/2].

    Closed form ``2 Gamma(q + 3/2) / (sqrt(pi) q!)`` from the Beta integral.
    """
    if q < 0:
        raise ValueError("filter order must be non-negative")
    return 2.0 * math.gamma(q + 1.5) / (math.sqrt(math.pi) * math.factorial(q))


@dataclass(frozen=True)
class FilterSpec:
    q: int
    L: float
    dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "q", int(self.q))
        object.__setattr__(self, "dim", int(self.dim))
        if self.q < 0:
            raise ValueError("filter order must be non-negative")
        if self.L <= 0:
            raise ValueError("averaging box edge must be positive")

    @property
    def c_q(self) -> float:
        return filter_normalization(self.q)

    def kernel_1d(self, s) -> np.ndarray:
        """Unscaled 1D kernel on the reference interval [-1/2, 1/2]."""
        s = np.asarray(s, dtype=float)
        inside = np.abs(s) <= 0.5
        base = np.where(inside, 1.0 - 4.0 * s * s, 0.0)
        if self.q == 0:
            return np.where(inside, 1.0, 0.0)
        return self.c_q * base**self.q

    def weights(self, points) -> np.ndarray:
        """Vectorised ``mu_L`` at ``(N, d)`` points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        w = np.full(len(pts), self.L ** (-self.dim))
        for k in range(self.dim):
            w = w * self.kernel_1d(pts[:, k] / self.L)
        return w

    @property
    def peak(self) -> float:
        return (self.c_q / self.L) ** self.dim


def filter_weight(spec: FilterSpec, x) -> float:
    """``mu_L(x)`` at a single point (zero outside K_L)."""
    return float(spec.weights(np.asarray(x, dtype=float).reshape(1, -1))[0])


def _gauss_panels(lo: float, hi: float, n_panels: int, order: int = 12):
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


def _tensor_quad(f, spec: FilterSpec, lo, hi, n_panels, weighted):
    nodes, w = _gauss_panels(lo, hi, n_panels)
    grids = np.meshgrid(*([nodes] * spec.dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    ww = w
    for _ in range(spec.dim - 1):
        ww = np.multiply.outer(ww, w)
    ww = np.asarray(ww).ravel()
    vals = np.asarray(f(pts), dtype=float).reshape(-1)
    if weighted:
        vals = vals * spec.weights(pts)
    return float(np.dot(ww, vals))


def averaging_error_probe(f, q: int, L: float, dim: int = 1, tol: float = 1e-13,
                          max_panels: int = 4096) -> float:
    """``|int_{K_L} f mu_L - int_K f|`` for a 1-periodic ``f``.

    ``f`` maps ``(N, dim)`` points to ``(N,)`` values.  Both integrals use
    composite Gauss-Legendre quadrature, doubling the panel count until two
    successive values agree to ``tol``.
    """
    spec = FilterSpec(q, L, dim)

    def converge(lo, hi, weighted, panels):
        prev = _tensor_quad(f, spec, lo, hi, panels, weighted)
        while panels < max_panels:
            panels *= 2
            cur = _tensor_quad(f, spec, lo, hi, panels, weighted)
            if abs(cur - prev) <= tol:
                return cur
            prev = cur
        return prev

    start = max(2, int(math.ceil(4 * L))) if dim == 1 else max(2, int(math.ceil(2 * L)))
    filtered = converge(-L / 2, L / 2, True, start)
    cell = converge(-0.5, 0.5, False, 4)
    return abs(filtered - cell)
