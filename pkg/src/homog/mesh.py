"""Structured P1 finite elements on the centred cube K_R = [-R/2, R/2]^d.

Squares are split into two triangles along the (i, j) -> (i+1, j+1)
diagonal.  Coefficients are sampled once per element at the barycenter, which
integrates the P1 stiffness exactly for element-wise constant tensors.

Matrices are ``scipy.sparse.csr_matrix``; mass matrices are lumped and kept
as 1D arrays.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .coeffs import CoefficientField
from .filters import FilterSpec

__all__ = [
    "StructuredMesh",
    "FemSystem",
    "build_mesh",
    "build_periodic_mesh",
    "assemble_stiffness",
    "assemble_lumped_mass",
    "assemble_filtered_mass",
    "assemble_load",
    "apply_dirichlet",
    "build_dirichlet_system",
    "build_periodic_cell_system",
    "element_filter_weights",
]


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """Uniform simplicial mesh of a cube.

    ``node_index`` maps mesh vertices to unknowns; for a periodic mesh,
    opposite faces map to the same unknown and ``n_dofs < len(nodes)``.
    """

    R: float
    n_per_cell: int
    d: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_mask: np.ndarray
    node_index: np.ndarray
    n_dofs: int
    periodic: bool = False

    @property
    def h(self) -> float:
        return 1.0 / self.n_per_cell

    @property
    def intervals(self) -> int:
        return int(round(self.R * self.n_per_cell))

    @property
    def dof_coords(self) -> np.ndarray:
        """Coordinates of one representative vertex per unknown."""
        out = np.empty((self.n_dofs, self.d))
        out[self.node_index] = self.nodes
        return out

    @property
    def barycenters(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @property
    def volumes(self) -> np.ndarray:
        return np.full(len(self.elements), self.h**self.d / math.factorial(self.d))

    def gradients(self) -> np.ndarray:
        """Gradients of the d+1 local hat functions, shape ``(E, d+1, d)``."""
        x = self.nodes[self.elements]
        jac = (x[:, 1:, :] - x[:, :1, :]).transpose(0, 2, 1)  # columns = edges
        inv = np.linalg.inv(jac)
        ref = np.vstack([-np.ones((1, self.d)), np.eye(self.d)])  # (d+1, d)
        return np.einsum("ad,edk->eak", ref, inv)


def _lattice(m: int, d: int, R: float):
    h_coords = -R / 2 + (R / m) * np.arange(m + 1)
    if d == 1:
        nodes = h_coords[:, None]
        elements = np.stack([np.arange(m), np.arange(1, m + 1)], axis=1)
        ij = np.arange(m + 1)[:, None]
        return nodes, elements, ij
    if d != 2:
        raise ValueError("only d = 1 and d = 2 are supported")
    ii, jj = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    nodes = np.stack([h_coords[ii], h_coords[jj]], axis=1)
    idx = lambda i, j: i * (m + 1) + j  # noqa: E731
    ci, cj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    ci, cj = ci.ravel(), cj.ravel()
    v00, v10 = idx(ci, cj), idx(ci + 1, cj)
    v01, v11 = idx(ci, cj + 1), idx(ci + 1, cj + 1)
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    elements = np.vstack([lower, upper])
    return nodes, elements, np.stack([ii, jj], axis=1)


def build_mesh(R: float, n_per_cell: int, d: int = 2) -> StructuredMesh:
    """Mesh of K_R with ``n_per_cell`` intervals per unit length.

    R is rounded to the nearest multiple of h = 1/n_per_cell.
    """
    if R < 1:
        raise ValueError("sampling box edge R must be >= 1")
    if n_per_cell < 4:
        raise ValueError("n_per_cell must be >= 4")
    m = int(round(R * n_per_cell))
    R_grid = m / n_per_cell
    nodes, elements, ij = _lattice(m, d, R_grid)
    boundary = np.any((ij == 0) | (ij == m), axis=1)
    return StructuredMesh(R_grid, n_per_cell, d, nodes, elements, boundary,
                          np.arange(len(nodes)), len(nodes))


def build_periodic_mesh(n_per_cell: int, d: int = 2) -> StructuredMesh:
    """Unit cell [-1/2, 1/2]^d with opposite faces identified."""
    if n_per_cell < 4:
        raise ValueError("n_per_cell must be >= 4")
    m = n_per_cell
    nodes, elements, ij = _lattice(m, d, 1.0)
    wrapped = ij % m
    index = wrapped[:, 0].copy()
    for k in range(1, d):
        index = index * m + wrapped[:, k]
    return StructuredMesh(1.0, n_per_cell, d, nodes, elements,
                          np.zeros(len(nodes), dtype=bool), index, m**d, periodic=True)


def _scatter_matrix(mesh: StructuredMesh, local: np.ndarray) -> sp.csr_matrix:
    dofs = mesh.node_index[mesh.elements]
    nloc = dofs.shape[1]
    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs))
    A = A.tocsr()
    A.sum_duplicates()
    return A


def element_tensors(mesh: StructuredMesh, field: CoefficientField) -> np.ndarray:
    if field.dim != mesh.d:
        raise ValueError("field and mesh dimensions differ")
    return field.evaluate(mesh.barycenters)


def assemble_stiffness(mesh: StructuredMesh, field: CoefficientField,
                       tensors: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """P1 stiffness ``A_ij = sum_e |e| grad phi_j . a(x_e) grad phi_i``."""
    if tensors is None:
        tensors = element_tensors(mesh, field)
    G = mesh.gradients()
    local = np.einsum("e,eak,ekl,ebl->eab", mesh.volumes, G, tensors, G)
    return _scatter_matrix(mesh, local)


def assemble_lumped_mass(mesh: StructuredMesh) -> np.ndarray:
    """Row-sum lumped mass: each element gives |e|/(d+1) to its vertices."""
    share = np.repeat((mesh.volumes / (mesh.d + 1))[:, None], mesh.d + 1, axis=1)
    return np.bincount(mesh.node_index[mesh.elements].ravel(), weights=share.ravel(),
                       minlength=mesh.n_dofs)


def assemble_filtered_mass(mesh: StructuredMesh, spec: FilterSpec,
                           lumped: Optional[np.ndarray] = None) -> np.ndarray:
    """Lumped filtered mass ``mu_L(x_i) M_ii``, rescaled to unit total.

    The rescaling removes the O(h^2) quadrature defect of the nodal rule so
    that filtered averages of constants are exact.
    """
    if spec.L > mesh.R + 1e-12:
        raise ValueError("averaging box exceeds sampling box")
    if lumped is None:
        lumped = assemble_lumped_mass(mesh)
    w = spec.weights(mesh.dof_coords) * lumped
    total = w.sum()
    if total <= 0:
        raise ValueError("filter has no support on the mesh nodes")
    return w / total


def element_filter_weights(mesh: StructuredMesh, spec: FilterSpec) -> np.ndarray:
    """Per-element filter weights ``|e| * mean(mu_L at vertices)``, unit total.

    The normalisation constant equals the one of
    :func:`assemble_filtered_mass`, since both rules reduce to
    ``sum_i mu_L(x_i) M_ii``.
    """
    if spec.L > mesh.R + 1e-12:
        raise ValueError("averaging box exceeds sampling box")
    nodal = spec.weights(mesh.nodes)
    w = mesh.volumes * nodal[mesh.elements].mean(axis=1)
    return w / w.sum()


def assemble_load(mesh: StructuredMesh, field: CoefficientField, i: int,
                  tensors: Optional[np.ndarray] = None) -> np.ndarray:
    """Weak divergence of ``a e_i``: ``b[k] = -sum_e |e| (a e_i) . grad phi_k``.

    ``i`` is zero-based.
    """
    if not 0 <= i < mesh.d:
        raise ValueError("direction index out of range")
    if tensors is None:
        tensors = element_tensors(mesh, field)
    G = mesh.gradients()
    flux = tensors[:, :, i]  # a e_i per element
    local = -np.einsum("e,ek,eak->ea", mesh.volumes, flux, G)
    return np.bincount(mesh.node_index[mesh.elements].ravel(), weights=local.ravel(),
                       minlength=mesh.n_dofs)


@dataclass(frozen=True, eq=False)
class FemSystem:
    """Assembled operators on one mesh.

    ``b`` has shape ``(d, n_dofs)``; ``M_filtered`` is ``None`` until a
    filter is attached.  ``tensors`` caches the element coefficients.
    """

    mesh: StructuredMesh
    A: sp.csr_matrix
    M_lump: np.ndarray
    b: np.ndarray
    tensors: np.ndarray
    M_filtered: Optional[np.ndarray] = None
    dirichlet: bool = False

    @property
    def interior(self) -> np.ndarray:
        return ~self.mesh.boundary_mask

    def with_filter(self, spec: FilterSpec) -> "FemSystem":
        mf = assemble_filtered_mass(self.mesh, spec, self.M_lump)
        return dataclasses.replace(self, M_filtered=mf)


def _assemble(mesh: StructuredMesh, field: CoefficientField) -> FemSystem:
    tensors = element_tensors(mesh, field)
    A = assemble_stiffness(mesh, field, tensors)
    M = assemble_lumped_mass(mesh)
    b = np.stack([assemble_load(mesh, field, i, tensors) for i in range(mesh.d)])
    return FemSystem(mesh, A, M, b, tensors)


def apply_dirichlet(system: FemSystem) -> FemSystem:
    """Homogeneous Dirichlet data on the mesh boundary.

    Boundary rows and columns of A become identity rows/columns, boundary
    load entries are zeroed.  The lumped mass is left untouched.
    """
    if system.dirichlet:
        return system
    bd = system.mesh.boundary_mask
    keep = sp.diags((~bd).astype(float))
    A = (keep @ system.A @ keep + sp.diags(bd.astype(float))).tocsr()
    A.eliminate_zeros()
    b = np.where(bd[None, :], 0.0, system.b)
    return dataclasses.replace(system, A=A, b=b, dirichlet=True)


def build_dirichlet_system(field: CoefficientField, R: float, n_per_cell: int,
                           spec: Optional[FilterSpec] = None) -> FemSystem:
    """Assemble on K_R, impose Dirichlet data, optionally attach a filter."""
    mesh = build_mesh(R, n_per_cell, field.dim)
    system = apply_dirichlet(_assemble(mesh, field))
    if spec is not None:
        system = system.with_filter(spec)
    return system


def build_periodic_cell_system(n_per_cell: int, field: CoefficientField) -> FemSystem:
    """Unit-cell system with periodic identification (A has constants in its kernel)."""
    if not field.is_periodic:
        raise ValueError("periodic reference requires periodic field")
    if abs(field.period - 1.0) > 1e-14:
        raise ValueError("periodic reference requires a 1-periodic field")
    return _assemble(build_periodic_mesh(n_per_cell, field.dim), field)
