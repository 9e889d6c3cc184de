"""Fixed triangulations of a rectangular domain, quadrature, and point location.

The computational domain is a rectangle that never changes during a run; all
moving-boundary behaviour lives in the fields defined on top of this mesh.
Meshes are immutable after construction and precompute the geometry needed by
interpolation, assembly and the semi-Lagrangian back-trace (barycentric
gradients, neighbour walk tables, grid buckets).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh2D",
    "QuadratureRule",
    "PointLocation",
    "build_rect_mesh",
    "triangle_rule",
    "locate_point",
    "locate_points",
]


class MeshError(ValueError):
    """Invalid mesh construction input."""


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Symmetric Gauss rule on the reference triangle.

    `points` are barycentric coordinates, shape (nq, 3); `weights` sum to the
    reference-triangle area 1/2 and the rule integrates polynomials up to
    `order` exactly.
    """

    order: int
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, float))
        object.__setattr__(self, "weights", np.asarray(self.weights, float))
        if np.any(self.weights <= 0):
            raise MeshError("quadrature weights must be positive")
        if abs(self.weights.sum() - 0.5) > 1e-12:
            raise MeshError("quadrature weights must sum to the reference area 1/2")


def _cyclic(a, b, c):
    return [(a, b, c), (c, a, b), (b, c, a)]


_RULES = {
    1: ([(1 / 3, 1 / 3, 1 / 3)], [0.5]),
    2: (_cyclic(2 / 3, 1 / 6, 1 / 6), [1 / 6] * 3),
    # Dunavant degree-4 rule, 6 points.
    4: (
        _cyclic(0.108103018168070, 0.445948490915965, 0.445948490915965)
        + _cyclic(0.816847572980459, 0.091576213509771, 0.091576213509771),
        [0.223381589678011 / 2] * 3 + [0.109951743655322 / 2] * 3,
    ),
}


def triangle_rule(order: int) -> QuadratureRule:
    """Return a quadrature rule exact for polynomials of degree <= order."""
    for avail in sorted(_RULES):
        if avail >= order:
            pts, w = _RULES[avail]
            return QuadratureRule(avail, np.array(pts), np.array(w))
    raise MeshError(f"no triangle rule of order {order} available")


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------

@dataclass
class Mesh2D:
    """Triangulation of the rectangle [x0,x1] x [y0,y1].

    nodes          : (n_nodes, 2) coordinates
    triangles      : (n_tri, 3) CCW node indices
    boundary_edges : {tag: (k, 2) node-index pairs}, tag in bottom/top/left/right
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: dict[str, np.ndarray]
    rect: tuple[float, float, float, float]  # x0, x1, y0, y1

    # derived geometry, filled in __post_init__
    areas: np.ndarray = field(init=False, repr=False)
    grad_bary: np.ndarray = field(init=False, repr=False)
    neighbors: np.ndarray = field(init=False, repr=False)
    edges: np.ndarray = field(init=False, repr=False)
    tri_edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, float)
        self.triangles = np.ascontiguousarray(self.triangles, np.int64)
        x0, x1, y0, y1 = self.rect
        tol = 1e-9 * max(x1 - x0, y1 - y0)
        if (
            self.nodes[:, 0].min() < x0 - tol
            or self.nodes[:, 0].max() > x1 + tol
            or self.nodes[:, 1].min() < y0 - tol
            or self.nodes[:, 1].max() > y1 + tol
        ):
            raise MeshError("node coordinates fall outside the declared rectangle")

        v = self.nodes[self.triangles]  # (m, 3, 2)
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0):
            raise MeshError("all triangles must have positive signed area")
        self.areas = 0.5 * det

        # Barycentric gradients: grad lambda_1, lambda_2 are rows of the
        # inverse edge matrix; lambda_0 = 1 - lambda_1 - lambda_2.
        inv = np.empty((len(det), 2, 2))
        inv[:, 0, 0] = e2[:, 1] / det
        inv[:, 0, 1] = -e2[:, 0] / det
        inv[:, 1, 0] = -e1[:, 1] / det
        inv[:, 1, 1] = e1[:, 0] / det
        self._inv_jac = inv
        self._v0 = v[:, 0]
        gb = np.empty((len(det), 3, 2))
        gb[:, 1] = inv[:, 0]
        gb[:, 2] = inv[:, 1]
        gb[:, 0] = -gb[:, 1] - gb[:, 2]
        self.grad_bary = gb

        self._build_edge_tables()
        self._check_boundary_edges()
        self._build_buckets()
        self._start_guess = 0

    # -- topology ----------------------------------------------------------

    def _build_edge_tables(self):
        t = self.triangles
        # local edge j joins vertices (j, j+1 mod 3)
        raw = np.stack(
            [t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1
        ).reshape(-1, 2)
        key = np.sort(raw, axis=1)
        self.edges, inverse = np.unique(key, axis=0, return_inverse=True)
        self.tri_edges = inverse.reshape(-1, 3)

        # neighbor across the edge opposite local vertex k, i.e. local edge
        # (k+1) in the joins-(j, j+1) convention; -1 on the boundary.
        owners = np.full((len(self.edges), 2), -1, np.int64)
        flat = self.tri_edges.ravel()
        tri_of = np.repeat(np.arange(len(t)), 3)
        for e, tri in zip(flat, tri_of):
            if owners[e, 0] < 0:
                owners[e, 0] = tri
            else:
                owners[e, 1] = tri
        self._edge_owners = owners
        nbr = np.empty((len(t), 3), np.int64)
        for k in range(3):
            e = self.tri_edges[:, (k + 1) % 3]
            own = owners[e]
            nbr[:, k] = np.where(own[:, 0] == np.arange(len(t)), own[:, 1], own[:, 0])
        self.neighbors = nbr

    def _check_boundary_edges(self):
        interior = self._edge_owners[:, 1] >= 0
        boundary_keys = {tuple(e) for e in self.edges[~interior]}
        tagged = set()
        for tag, arr in self.boundary_edges.items():
            for e in np.sort(np.asarray(arr, np.int64), axis=1):
                e = tuple(e)
                if e not in boundary_keys:
                    raise MeshError(f"edge {e} tagged '{tag}' is not a boundary edge")
                if e in tagged:
                    raise MeshError(f"edge {e} carries two tags")
                tagged.add(e)
        if tagged != boundary_keys:
            raise MeshError("some boundary edges are untagged")

    def _build_buckets(self):
        """One starting triangle per cell of a uniform background grid."""
        x0, x1, y0, y1 = self.rect
        n = max(1, int(np.sqrt(len(self.triangles) / 2)))
        self._nbx = self._nby = n
        self._bx = (x1 - x0) / n
        self._by = (y1 - y0) / n
        start = np.full((n, n), -1, np.int64)
        cent = self.nodes[self.triangles].mean(axis=1)
        ix = np.clip(((cent[:, 0] - x0) / self._bx).astype(int), 0, n - 1)
        iy = np.clip(((cent[:, 1] - y0) / self._by).astype(int), 0, n - 1)
        start[ix, iy] = np.arange(len(self.triangles))
        # fill empty buckets from neighbours (coarse meshes)
        while np.any(start < 0):
            empty = np.argwhere(start < 0)
            for i, j in empty:
                patch = start[max(0, i - 1): i + 2, max(0, j - 1): j + 2]
                good = patch[patch >= 0]
                if len(good):
                    start[i, j] = good[0]
        self._bucket_start = start

    # -- queries -----------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def diagonal(self) -> float:
        x0, x1, y0, y1 = self.rect
        return float(np.hypot(x1 - x0, y1 - y0))

    @property
    def tol_geom(self) -> float:
        return 1e-10 * self.diagonal

    @property
    def h_max(self) -> float:
        v = self.nodes[self.triangles]
        d = np.linalg.norm(v - np.roll(v, 1, axis=1), axis=2)
        return float(d.max())

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[self.edges[:, 0]] + self.nodes[self.edges[:, 1]])

    def dof_coords(self, degree: int) -> np.ndarray:
        if degree == 1:
            return self.nodes
        if degree == 2:
            return np.vstack([self.nodes, self.edge_midpoints()])
        raise MeshError(f"unsupported degree {degree}")

    def n_dofs(self, degree: int) -> int:
        return self.n_nodes if degree == 1 else self.n_nodes + len(self.edges)

    def boundary_nodes(self, tag: str) -> np.ndarray:
        return np.unique(self.boundary_edges[tag])

    def boundary_dofs(self, tag: str, degree: int) -> np.ndarray:
        """Scalar dof ids on a tagged boundary (nodes, plus edge dofs for P2)."""
        ids = self.boundary_nodes(tag)
        if degree == 1:
            return ids
        key = np.sort(np.asarray(self.boundary_edges[tag], np.int64), axis=1)
        edge_lookup = {tuple(e): i for i, e in enumerate(self.edges)}
        eids = np.array([edge_lookup[tuple(e)] for e in key], np.int64)
        return np.concatenate([ids, self.n_nodes + eids])

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        x0, x1, y0, y1 = self.rect
        t = self.tol_geom
        return (
            (x[:, 0] >= x0 - t) & (x[:, 0] <= x1 + t)
            & (x[:, 1] >= y0 - t) & (x[:, 1] <= y1 + t)
        )

    def clamp_to_rect(self, x) -> np.ndarray:
        """Nearest point of the rectangle (the exterior projection)."""
        x = np.asarray(x, float)
        x0, x1, y0, y1 = self.rect
        return np.stack(
            [np.clip(x[..., 0], x0, x1), np.clip(x[..., 1], y0, y1)], axis=-1
        )

    def barycentric(self, tri, x):
        """Barycentric coordinates of x (broadcastable) in triangle(s) tri."""
        d = np.asarray(x, float) - self._v0[tri]
        lam12 = np.einsum("...ij,...j->...i", self._inv_jac[tri], d)
        lam0 = 1.0 - lam12[..., 0] - lam12[..., 1]
        return np.concatenate([lam0[..., None], lam12], axis=-1)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def build_rect_mesh(rect, nx: int, ny: int) -> Mesh2D:
    """Structured triangulation of [x0,x1] x [y0,y1] with 2*nx*ny triangles.

    Each grid cell is split along a diagonal, alternating orientation in a
    checkerboard to avoid a preferred mesh direction. Boundary edges are
    tagged bottom/top/left/right.
    """
    x0, x1, y0, y1 = map(float, rect)
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    if x1 <= x0 or y1 <= y0:
        raise MeshError("rectangle must have positive extent")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.stack([X.ravel(order="F"), Y.ravel(order="F")], axis=1)

    def nid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            if (i + j) % 2 == 0:
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:
                tris.append((a, b, d))
                tris.append((b, c, d))
    triangles = np.array(tris, np.int64)

    boundary = {
        "bottom": np.array([(nid(i, 0), nid(i + 1, 0)) for i in range(nx)]),
        "top": np.array([(nid(i, ny), nid(i + 1, ny)) for i in range(nx)]),
        "left": np.array([(nid(0, j), nid(0, j + 1)) for j in range(ny)]),
        "right": np.array([(nid(nx, j), nid(nx, j + 1)) for j in range(ny)]),
    }
    return Mesh2D(nodes, triangles, boundary, (x0, x1, y0, y1))


# ---------------------------------------------------------------------------
# Point location
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointLocation:
    """Result of locating a point: a containing triangle or Outside."""

    triangle: int  # -1 when outside the domain
    bary: np.ndarray | None
    nearest: np.ndarray  # the point itself inside, boundary projection outside

    @property
    def inside(self) -> bool:
        return self.triangle >= 0


def locate_points(mesh: Mesh2D, xs, start=None):
    """Vectorized point location by neighbour walking.

    Returns (tri, bary, inside): tri is -1 where the point lies outside the
    rectangle; bary rows are valid only where inside. Points inside the
    rectangle always resolve (walk, then bucket fallback).
    """
    xs = np.atleast_2d(np.asarray(xs, float))
    n = len(xs)
    inside = mesh.contains(xs)
    tri = np.full(n, -1, np.int64)
    bary = np.zeros((n, 3))

    idx = np.flatnonzero(inside)
    if len(idx):
        x0, _, y0, _ = mesh.rect
        pts = xs[idx]
        if start is None:
            bi = np.clip(((pts[:, 0] - x0) / mesh._bx).astype(int), 0, mesh._nbx - 1)
            bj = np.clip(((pts[:, 1] - y0) / mesh._by).astype(int), 0, mesh._nby - 1)
            cur = mesh._bucket_start[bi, bj]
        else:
            cur = np.full(len(idx), start, np.int64)
        tol = mesh.tol_geom / max(mesh.h_max, 1e-300)
        pending = np.arange(len(idx))
        visits = np.zeros(len(idx), np.int64)
        max_walk = 4 * (mesh._nbx + mesh._nby) + 16
        while len(pending):
            lam = mesh.barycentric(cur[pending], pts[pending])
            worst = lam.argmin(axis=1)
            ok = lam[np.arange(len(pending)), worst] >= -tol
            done = pending[ok]
            tri[idx[done]] = cur[done]
            bary[idx[done]] = lam[ok]
            pending = pending[~ok]
            if not len(pending):
                break
            nxt = mesh.neighbors[cur[pending], worst[~ok]]
            stuck = nxt < 0
            visits[pending] += 1
            stuck |= visits[pending] > max_walk
            if np.any(stuck):
                # Boundary-grazing or cycling points: resolve by brute force
                # over the (small) set, guaranteed for points in the rectangle.
                for p in pending[stuck]:
                    t_all = mesh.barycentric(
                        np.arange(mesh.n_triangles), pts[p]
                    )
                    best = t_all.min(axis=1).argmax()
                    tri[idx[p]] = best
                    bary[idx[p]] = t_all[best]
                keep = ~stuck
                pending = pending[keep]
                nxt = nxt[keep]
            cur[pending] = nxt
    return tri, bary, inside


def locate_point(mesh: Mesh2D, x, start=None) -> PointLocation:
    """Locate a single point; Outside is a value carrying the boundary projection."""
    x = np.asarray(x, float)
    tri, bary, inside = locate_points(mesh, x[None, :], start=start)
    if not inside[0]:
        return PointLocation(-1, None, mesh.clamp_to_rect(x))
    return PointLocation(int(tri[0]), bary[0], x)
