"""P1 operators on a triangulation: consistent and lumped mass, stiffness,
the chemotactic convection matrix and its artificial diffusion.

All matrices built from a mesh share ``mesh.graph`` as their CSR pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import sparsela
from .mesh import Mesh, MeshError, gamma_i

# 7-point degree-5 rule on the reference triangle (barycentric points, weights sum to 1)
_S15 = np.sqrt(15.0)
_A1 = (6.0 - _S15) / 21.0
_A2 = (6.0 + _S15) / 21.0
_W1 = (155.0 - _S15) / 1200.0
_W2 = (155.0 + _S15) / 1200.0
QUAD7_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _A1, 1 - 2 * _A1],
    [_A1, 1 - 2 * _A1, _A1],
    [1 - 2 * _A1, _A1, _A1],
    [_A2, _A2, 1 - 2 * _A2],
    [_A2, 1 - 2 * _A2, _A2],
    [1 - 2 * _A2, _A2, _A2],
])
QUAD7_WEIGHTS = np.array([9 / 40, _W1, _W1, _W1, _W2, _W2, _W2])


def _check_areas(mesh: Mesh) -> None:
    if np.any(mesh.areas <= 0.0):
        raise MeshError("degenerate triangle (area <= 0)")


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    g = mesh.graph
    data = np.bincount(g.slots.ravel(), weights=local.ravel(), minlength=g.nnz)
    n = mesh.n_nodes
    return sp.csr_matrix((data, g.indices, g.indptr), shape=(n, n))


def lumped_masses(mesh: Mesh) -> np.ndarray:
    """m_i = sum over triangles at node i of |K|/3."""
    _check_areas(mesh)
    return np.bincount(
        mesh.triangles.ravel(), weights=np.repeat(mesh.areas / 3.0, 3), minlength=mesh.n_nodes
    )


def assemble_mass(mesh: Mesh) -> tuple[sp.csr_matrix, np.ndarray]:
    """Consistent mass matrix and the diagonal of its lumped counterpart."""
    _check_areas(mesh)
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    M = _scatter(mesh, mesh.areas[:, None, None] * ref)
    return M, lumped_masses(mesh)


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    _check_areas(mesh)
    G = mesh.gradients
    local = mesh.areas[:, None, None] * np.einsum("kad,kbd->kab", G, G)
    return _scatter(mesh, local)


def _check_nodal(mesh: Mesh, v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (mesh.n_nodes,):
        raise ValueError(f"{name} has shape {v.shape}, expected ({mesh.n_nodes},)")
    return v


def assemble_convection(mesh: Mesh, beta, lam: float = 1.0) -> sp.csr_matrix:
    """tau_ij = lam * (phi_j grad c_h, grad phi_i) for c_h with nodal values ``beta``.

    grad c_h and grad phi_i are constant on each triangle and the integral
    of phi_j over K is |K|/3, so the local block has identical columns.
    """
    beta = _check_nodal(mesh, beta, "beta")
    G = mesh.gradients
    grad_c = np.einsum("ka,kad->kd", beta[mesh.triangles], G)
    row = (lam / 3.0) * mesh.areas[:, None] * np.einsum("kad,kd->ka", G, grad_c)
    local = np.repeat(row[:, :, None], 3, axis=2)
    return _scatter(mesh, local)


def assemble_artificial_diffusion(T) -> sp.csr_matrix:
    """d_ij = max(-tau_ij, 0, -tau_ji) off the diagonal, d_ii = -sum_{j!=i} d_ij."""
    T = sparsela.as_csr(T)
    if T.shape[0] != T.shape[1]:
        raise ValueError("T must be square")
    # symmetrize the pattern so both (i, j) and (j, i) have a slot
    P = sparsela.add_scaled(T, T.T.tocsr(), 0.0)
    P = sparsela.add_scaled(P, sp.identity(T.shape[0], format="csr"), 0.0)
    P.sort_indices()
    return _diffusion_on_pattern(P.data, P.indptr, P.indices, sparsela.transpose_slots(P.indptr, P.indices))


def _diffusion_on_pattern(tau, indptr, indices, transpose) -> sp.csr_matrix:
    n = len(indptr) - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    off = rows != indices
    d = np.where(off, np.maximum(np.maximum(-tau, 0.0), -tau[transpose]), 0.0)
    diag_sum = np.bincount(rows, weights=d, minlength=n)
    d = np.where(off, d, -diag_sum[rows])
    return sp.csr_matrix((d, indices.copy(), indptr.copy()), shape=(n, n))


def lumped_inner_product(mesh: Mesh, psi, chi) -> float:
    """(psi, chi)_h: vertex quadrature, equal to sum_i m_i psi_i chi_i."""
    psi = _check_nodal(mesh, psi, "psi")
    chi = _check_nodal(mesh, chi, "chi")
    return float(np.dot(lumped_masses(mesh), psi * chi))


def nodal_interpolant(mesh: Mesh, f) -> np.ndarray:
    """Nodal values f(x_i, y_i); ``f`` is called once with coordinate arrays."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    values = np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape).copy()
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise ValueError(f"non-finite value at node {bad} ({x[bad]}, {y[bad]})")
    return values


def quadrature_points(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Physical 7-point quadrature nodes (K, 7, 2) and weights (K, 7)."""
    p = mesh.nodes[mesh.triangles]
    pts = np.einsum("qa,kad->kqd", QUAD7_POINTS, p)
    return pts, mesh.areas[:, None] * QUAD7_WEIGHTS[None, :]


def ritz_projection(mesh: Mesh, f, grad_f, tol: float = 1e-10) -> np.ndarray:
    """Elliptic projection: solve (S + M) r = [(grad f, grad phi_i) + (f, phi_i)].

    ``f(x, y)`` returns values, ``grad_f(x, y)`` returns ``(fx, fy)``.
    """
    pts, w = quadrature_points(mesh)
    x, y = pts[..., 0], pts[..., 1]
    fv = np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape)
    gx, gy = grad_f(x, y)
    gx = np.broadcast_to(np.asarray(gx, dtype=float), x.shape)
    gy = np.broadcast_to(np.asarray(gy, dtype=float), x.shape)
    G = mesh.gradients
    local = (
        np.einsum("kq,kq,ka->ka", w, gx, G[:, :, 0])
        + np.einsum("kq,kq,ka->ka", w, gy, G[:, :, 1])
        + np.einsum("kq,kq,qa->ka", w, fv, QUAD7_POINTS)
    )
    rhs = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)
    M, _ = assemble_mass(mesh)
    S = assemble_stiffness(mesh)
    r, report = sparsela.solve(sparsela.add_scaled(S, M, 1.0), rhs, tol)
    if not report.success:
        raise sparsela.SolverError(f"Ritz projection solve failed (residual {report.residual:.3e})", report)
    return r


@dataclass(eq=False)
class Operators:
    """Time-independent operators of one mesh plus fast rebuilds of T and D."""

    mesh: Mesh
    M: sp.csr_matrix
    lumped: np.ndarray
    S: sp.csr_matrix
    _factors: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, mesh: Mesh) -> "Operators":
        M, m = assemble_mass(mesh)
        return cls(mesh=mesh, M=M, lumped=m, S=assemble_stiffness(mesh))

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    @cached_property
    def gamma(self) -> np.ndarray:
        return np.array([gamma_i(self.mesh, i) for i in range(self.n)])

    def lumped_matrix(self) -> sp.csr_matrix:
        g = self.mesh.graph
        data = np.zeros(g.nnz)
        data[g.diagonal] = self.lumped
        return sp.csr_matrix((data, g.indices, g.indptr), shape=(self.n, self.n))

    def convection(self, beta, lam: float) -> sp.csr_matrix:
        return assemble_convection(self.mesh, beta, lam)

    def diffusion(self, T) -> sp.csr_matrix:
        g = self.mesh.graph
        if not sparsela.same_pattern(T, self.S):
            return assemble_artificial_diffusion(T)
        return _diffusion_on_pattern(T.data, g.indptr, g.indices, g.transpose)

    def chemical_factor(self, k: float, consistent: bool) -> sparsela.Factorization:
        """LU of M_L + k(M_L + S) (or with M for the unstabilized scheme), cached per k."""
        key = (float(k), bool(consistent))
        if key not in self._factors:
            mass = self.M if consistent else self.lumped_matrix()
            A2 = sparsela.add_scaled(mass, sparsela.add_scaled(mass, self.S, 1.0), k)
            self._factors[key] = sparsela.Factorization(A2)
        return self._factors[key]
