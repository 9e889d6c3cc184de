"""Vectorized scalar FEM assembly used by the phase filter and melt kinetics."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fields import element_dofs, shape_grads, shape_values
from .mesh import Mesh2D, QuadratureRule, triangle_rule

__all__ = [
    "scalar_mass_matrix",
    "scalar_stiffness_matrix",
    "scalar_load_vector",
    "scalar_grad_load_vector",
]


def _qp_weights(mesh: Mesh2D, rule: QuadratureRule) -> np.ndarray:
    return rule.weights[None, :] * (2.0 * mesh.areas)[:, None]


def _shape_data(mesh: Mesh2D, degree: int, rule: QuadratureRule):
    N = shape_values(degree, rule.points)  # (nq, n_loc)
    lam = np.broadcast_to(rule.points, (mesh.n_triangles,) + rule.points.shape)
    G = shape_grads(degree, lam.transpose(1, 0, 2), mesh.grad_bary)  # (nq, n_tri, n_loc, 2)
    return N, G.transpose(1, 0, 2, 3)  # (n_tri, nq, n_loc, 2)


def _scatter(mesh: Mesh2D, degree: int, elem_mats: np.ndarray) -> sp.csr_matrix:
    dofs = element_dofs(mesh, degree)
    n_loc = dofs.shape[1]
    rows = np.repeat(dofs, n_loc, axis=1).ravel()
    cols = np.tile(dofs, (1, n_loc)).ravel()
    n = mesh.n_dofs(degree)
    return sp.coo_matrix((elem_mats.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def scalar_mass_matrix(mesh: Mesh2D, degree: int = 1, rule: QuadratureRule | None = None,
                       coeff: np.ndarray | None = None) -> sp.csr_matrix:
    """Assemble the mass matrix, optionally weighted by coeff at quadrature points."""
    rule = rule or triangle_rule(4)
    N, _ = _shape_data(mesh, degree, rule)
    w = _qp_weights(mesh, rule)
    if coeff is not None:
        w = w * coeff
    elem = np.einsum("tq,qa,qb->tab", w, N, N)
    return _scatter(mesh, degree, elem)


def scalar_stiffness_matrix(mesh: Mesh2D, degree: int = 1, rule: QuadratureRule | None = None,
                            coeff: np.ndarray | None = None) -> sp.csr_matrix:
    """Assemble the stiffness matrix int c grad(N_i).grad(N_j)."""
    rule = rule or triangle_rule(4)
    _, G = _shape_data(mesh, degree, rule)
    w = _qp_weights(mesh, rule)
    if coeff is not None:
        w = w * coeff
    elem = np.einsum("tq,tqad,tqbd->tab", w, G, G)
    return _scatter(mesh, degree, elem)


def scalar_load_vector(mesh: Mesh2D, qp_values: np.ndarray, degree: int = 1,
                       rule: QuadratureRule | None = None) -> np.ndarray:
    """Assemble int f N_i from values f at quadrature points (n_tri, nq)."""
    rule = rule or triangle_rule(4)
    N, _ = _shape_data(mesh, degree, rule)
    w = _qp_weights(mesh, rule)
    elem = np.einsum("tq,tq,qa->ta", w, qp_values, N)
    out = np.zeros(mesh.n_dofs(degree))
    np.add.at(out, element_dofs(mesh, degree), elem)
    return out


def scalar_grad_load_vector(mesh: Mesh2D, qp_vectors: np.ndarray, degree: int = 1,
                            rule: QuadratureRule | None = None) -> np.ndarray:
    """Assemble int v . grad(N_i) from vectors v at quadrature points (n_tri, nq, 2)."""
    rule = rule or triangle_rule(4)
    _, G = _shape_data(mesh, degree, rule)
    w = _qp_weights(mesh, rule)
    elem = np.einsum("tq,tqd,tqad->ta", w, qp_vectors, G)
    out = np.zeros(mesh.n_dofs(degree))
    np.add.at(out, element_dofs(mesh, degree), elem)
    return out
