"""Nodal scalar/vector/tensor fields over a fixed triangulation.

Fields store one coefficient per degree-of-freedom site (vertices for P1,
vertices plus edge midpoints for P2) and per component. Evaluation anywhere
in the domain goes through barycentric interpolation; gradients are those of
the piecewise-polynomial interpolant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh2D, QuadratureRule, locate_points

__all__ = [
    "Field",
    "OutsideDomainError",
    "eval_field",
    "grad_field",
    "element_dofs",
    "shape_values",
    "shape_grads",
    "project_element_to_dofs",
    "integrate",
]

RANK_SHAPES = {"scalar": (), "vector": (2,), "tensor": (2, 2)}


class OutsideDomainError(ValueError):
    """Raised when a caller evaluates a field outside the domain without a policy."""


@dataclass
class Field:
    """Coefficients of a continuous piecewise-polynomial field."""

    mesh: Mesh2D
    rank: str
    degree: int
    data: np.ndarray

    def __post_init__(self):
        if self.rank not in RANK_SHAPES:
            raise ValueError(f"unknown rank {self.rank!r}")
        want = (self.mesh.n_dofs(self.degree),) + RANK_SHAPES[self.rank]
        self.data = np.ascontiguousarray(self.data, float)
        if self.data.shape != want:
            raise ValueError(f"coefficient shape {self.data.shape} != {want}")

    # -- constructors --------------------------------------------------

    @classmethod
    def zeros(cls, mesh: Mesh2D, rank: str, degree: int = 1) -> "Field":
        return cls(mesh, rank, degree, np.zeros((mesh.n_dofs(degree),) + RANK_SHAPES[rank]))

    @classmethod
    def constant(cls, mesh: Mesh2D, value, rank: str, degree: int = 1) -> "Field":
        value = np.asarray(value, float)
        data = np.broadcast_to(value, (mesh.n_dofs(degree),) + RANK_SHAPES[rank]).copy()
        return cls(mesh, rank, degree, data)

    @classmethod
    def from_callable(cls, mesh: Mesh2D, fn, rank: str, degree: int = 1) -> "Field":
        """Nodal interpolation: fn maps (n, 2) coordinates to per-site values."""
        x = mesh.dof_coords(degree)
        data = np.asarray(fn(x), float).reshape((len(x),) + RANK_SHAPES[rank])
        return cls(mesh, rank, degree, data)

    def copy(self) -> "Field":
        return Field(self.mesh, self.rank, self.degree, self.data.copy())

    @property
    def dof_coords(self) -> np.ndarray:
        return self.mesh.dof_coords(self.degree)

    def with_data(self, data: np.ndarray) -> "Field":
        return Field(self.mesh, self.rank, self.degree, data)


# ---------------------------------------------------------------------------
# Reference shape functions
# ---------------------------------------------------------------------------

def shape_values(degree: int, lam: np.ndarray) -> np.ndarray:
    """Shape functions at barycentric points lam (..., 3) -> (..., n_loc)."""
    lam = np.asarray(lam, float)
    if degree == 1:
        return lam
    if degree == 2:
        l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
        return np.stack(
            [
                l0 * (2 * l0 - 1),
                l1 * (2 * l1 - 1),
                l2 * (2 * l2 - 1),
                4 * l0 * l1,
                4 * l1 * l2,
                4 * l2 * l0,
            ],
            axis=-1,
        )
    raise ValueError(f"unsupported degree {degree}")


def shape_grads(degree: int, lam: np.ndarray, grad_bary: np.ndarray) -> np.ndarray:
    """Physical shape-function gradients.

    lam: (..., 3) barycentric points; grad_bary: (..., 3, 2) per-element
    barycentric gradients broadcast against lam. Returns (..., n_loc, 2).
    """
    lam = np.asarray(lam, float)
    if degree == 1:
        return np.broadcast_to(grad_bary, lam.shape[:-1] + (3, 2)).copy()
    if degree == 2:
        g = grad_bary
        l = lam[..., None]  # (..., 3, 1)
        vertex = (4 * l - 1) * g
        edge = np.stack(
            [
                4 * (lam[..., 0, None] * g[..., 1, :] + lam[..., 1, None] * g[..., 0, :]),
                4 * (lam[..., 1, None] * g[..., 2, :] + lam[..., 2, None] * g[..., 1, :]),
                4 * (lam[..., 2, None] * g[..., 0, :] + lam[..., 0, None] * g[..., 2, :]),
            ],
            axis=-2,
        )
        return np.concatenate([vertex, edge], axis=-2)
    raise ValueError(f"unsupported degree {degree}")


def element_dofs(mesh: Mesh2D, degree: int) -> np.ndarray:
    """(n_tri, n_loc) global scalar-dof ids per element."""
    if degree == 1:
        return mesh.triangles
    if degree == 2:
        return np.hstack([mesh.triangles, mesh.n_nodes + mesh.tri_edges])
    raise ValueError(f"unsupported degree {degree}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def eval_at(f: Field, tri: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Interpolate at known (triangle, barycentric) locations; vectorized."""
    dofs = element_dofs(f.mesh, f.degree)[tri]  # (n, n_loc)
    N = shape_values(f.degree, bary)  # (n, n_loc)
    vals = f.data[dofs]  # (n, n_loc, *comp)
    return np.einsum("nl,nl...->n...", N, vals)


def grad_at(f: Field, tri: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Gradient of the interpolant at (triangle, barycentric) locations."""
    dofs = element_dofs(f.mesh, f.degree)[tri]
    G = shape_grads(f.degree, bary, f.mesh.grad_bary[tri])  # (n, n_loc, 2)
    vals = f.data[dofs]
    return np.einsum("nld,nl...->n...d", G, vals)


def _locate_or_raise(f: Field, x):
    x = np.atleast_2d(np.asarray(x, float))
    tri, bary, inside = locate_points(f.mesh, x)
    if not np.all(inside):
        bad = x[~inside][0]
        raise OutsideDomainError(
            f"evaluation point {bad} lies outside the domain; "
            "use an out-of-domain policy for back-traced points"
        )
    return tri, bary


def eval_field(f: Field, x) -> np.ndarray:
    """Value of f at point(s) x strictly inside the domain."""
    x = np.asarray(x, float)
    single = x.ndim == 1
    tri, bary = _locate_or_raise(f, x)
    out = eval_at(f, tri, bary)
    return out[0] if single else out


def grad_field(f: Field, x) -> np.ndarray:
    """Gradient of f at point(s) x; one tensor rank higher than f."""
    x = np.asarray(x, float)
    single = x.ndim == 1
    tri, bary = _locate_or_raise(f, x)
    out = grad_at(f, tri, bary)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Element <-> dof transfers and integrals
# ---------------------------------------------------------------------------

def project_element_to_dofs(mesh: Mesh2D, degree: int, elem_values: np.ndarray) -> np.ndarray:
    """Area-weighted average of per-element values onto dof sites."""
    elem_values = np.asarray(elem_values, float)
    dofs = element_dofs(mesh, degree)
    comp = elem_values.shape[1:]
    acc = np.zeros((mesh.n_dofs(degree),) + comp)
    wsum = np.zeros(mesh.n_dofs(degree))
    w = mesh.areas
    contrib = elem_values * w.reshape((-1,) + (1,) * len(comp))
    for k in range(dofs.shape[1]):
        np.add.at(acc, dofs[:, k], contrib)
        np.add.at(wsum, dofs[:, k], w)
    return acc / wsum.reshape((-1,) + (1,) * len(comp))


def qp_geometry(mesh: Mesh2D, rule: QuadratureRule):
    """Quadrature data: physical points (n_tri, nq, 2) and weights (n_tri, nq).

    Weights include the element Jacobian, so a plain sum integrates over the
    whole rectangle.
    """
    lam = rule.points  # (nq, 3)
    verts = mesh.nodes[mesh.triangles]  # (n_tri, 3, 2)
    pts = np.einsum("qk,tkd->tqd", lam, verts)
    w = rule.weights[None, :] * (2.0 * mesh.areas)[:, None]
    return pts, w


def values_at_qp(f: Field, rule: QuadratureRule) -> np.ndarray:
    """Field values at every quadrature point: (n_tri, nq, *comp)."""
    N = shape_values(f.degree, rule.points)  # (nq, n_loc)
    vals = f.data[element_dofs(f.mesh, f.degree)]  # (n_tri, n_loc, *comp)
    return np.einsum("ql,tl...->tq...", N, vals)


def grads_at_qp(f: Field, rule: QuadratureRule) -> np.ndarray:
    """Field gradients at every quadrature point: (n_tri, nq, *comp, 2)."""
    lam = np.broadcast_to(rule.points, (f.mesh.n_triangles,) + rule.points.shape)
    G = shape_grads(f.degree, lam.transpose(1, 0, 2), f.mesh.grad_bary)  # (nq, n_tri, n_loc, 2)
    vals = f.data[element_dofs(f.mesh, f.degree)]
    return np.einsum("qtld,tl...->tq...d", G, vals)


def integrate(mesh: Mesh2D, rule: QuadratureRule, qp_values: np.ndarray) -> float | np.ndarray:
    """Integrate per-quadrature-point values (n_tri, nq, ...) over the domain."""
    _, w = qp_geometry(mesh, rule)
    return np.einsum("tq,tq...->...", w, qp_values)
