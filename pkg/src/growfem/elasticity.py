"""Hyperelastic constitutive laws and the incremental equilibrium solve.

The solid is compressible neo-Hookean; the exterior of the body is a very
soft linear solid that merely extends the displacement smoothly over the
computational rectangle. Each time step minimizes the incremental energy of
the displacement increment u, with the body/exterior blend controlled by the
phase function and tractions applied either on mesh-aligned boundaries or as
a diffuse interface force.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fields import (
    Field,
    element_dofs,
    shape_grads,
    shape_values,
    values_at_qp,
)
from .mesh import Mesh2D, triangle_rule
from .phase import smooth_heaviside, smooth_heaviside_deriv
from .solvers import newton_minimize
from .state import State

__all__ = [
    "NeoHookeanParams",
    "ExteriorParams",
    "SolidExteriorBlend",
    "FixedDisplacement",
    "FixedComponent",
    "Traction",
    "Free",
    "BoundaryConditions",
    "InvertedStateError",
    "neo_hookean_energy",
    "cauchy_stress",
    "exterior_energy",
    "blended_energy_density",
    "assemble_incremental_energy",
    "solve_equilibrium",
]


class InvertedStateError(ValueError):
    """det F <= 0: the elastic state is inverted."""


# ---------------------------------------------------------------------------
# Material parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NeoHookeanParams:
    """Lame parameters of the compressible neo-Hookean solid (stress units)."""

    mu: float
    lam: float

    def __post_init__(self):
        if self.mu <= 0 or self.lam < 0:
            raise ValueError("require mu > 0 and lambda >= 0")


@dataclass(frozen=True)
class ExteriorParams:
    """Lame parameters of the soft linear solid filling the exterior."""

    mu_c: float
    lam_c: float

    def __post_init__(self):
        if self.mu_c <= 0 or self.lam_c <= 0:
            raise ValueError("exterior Lame parameters must be positive")

    @classmethod
    def from_solid(cls, solid: NeoHookeanParams, factor: float = 1e-3) -> "ExteriorParams":
        return cls(factor * solid.mu, factor * solid.lam)


@dataclass(frozen=True)
class SolidExteriorBlend:
    """Solid + soft-exterior material pairing used by the growth problems."""

    solid: NeoHookeanParams
    exterior: ExteriorParams
    l: float = 2.0


# ---------------------------------------------------------------------------
# Pointwise constitutive functions
# ---------------------------------------------------------------------------

def _det2(F):
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def neo_hookean_energy(F, p: NeoHookeanParams) -> float:
    """W(F) = mu/2 (tr(F^T F) - 2 - 2 ln det F) + lam/2 (det F - 1)^2."""
    F = np.asarray(F, float)
    J = _det2(F)
    if np.any(J <= 0):
        raise InvertedStateError(f"det F = {np.min(J):.3e} <= 0")
    trC = np.sum(F * F, axis=(-2, -1))
    W = 0.5 * p.mu * (trC - 2.0 - 2.0 * np.log(J)) + 0.5 * p.lam * (J - 1.0) ** 2
    return float(W) if W.ndim == 0 else W


def neo_hookean_energy_batch(F: np.ndarray, mu: float, lam: float) -> np.ndarray:
    """Batch energy; inverted states evaluate to +inf (for line searches)."""
    J = _det2(F)
    ok = J > 0
    trC = np.sum(F * F, axis=(-2, -1))
    with np.errstate(divide="ignore", invalid="ignore"):
        W = 0.5 * mu * (trC - 2.0 - 2.0 * np.log(np.where(ok, J, 1.0))) \
            + 0.5 * lam * (J - 1.0) ** 2
    return np.where(ok, W, np.inf)


def cauchy_stress(Fe, rho, p: NeoHookeanParams) -> np.ndarray:
    """sigma = rho [mu (Fe Fe^T - I) + lam (J - 1) J I], J = det Fe."""
    Fe = np.asarray(Fe, float)
    J = _det2(Fe)
    if np.any(J <= 0):
        raise InvertedStateError(f"det Fe = {np.min(J):.3e} <= 0")
    B = np.einsum("...ij,...kj->...ik", Fe, Fe)
    I = np.eye(2)
    sig = p.mu * (B - I) + (p.lam * (J - 1.0) * J)[..., None, None] * I
    return np.asarray(rho)[..., None, None] * sig


def exterior_energy(grad_u, p: ExteriorParams) -> float:
    """Soft isotropic linear energy mu_c/4 |grad u + grad u^T|^2 + lam_c/2 tr(grad u)^2."""
    G = np.asarray(grad_u, float)
    S = G + np.swapaxes(G, -1, -2)
    tr = G[..., 0, 0] + G[..., 1, 1]
    W = 0.25 * p.mu_c * np.sum(S * S, axis=(-2, -1)) + 0.5 * p.lam_c * tr * tr
    return float(W) if W.ndim == 0 else W


def blended_energy_density(grad_u, Fe_g, phi_value, solid: NeoHookeanParams,
                           ext: ExteriorParams, l: float) -> float:
    """H_l(phi) W_solid((I + grad u) Fe_g) + (1 - H_l(phi)) W_linear(grad u)."""
    h = smooth_heaviside(phi_value, l)
    F = (np.eye(2) + np.asarray(grad_u, float)) @ np.asarray(Fe_g, float)
    return h * neo_hookean_energy(F, solid) + (1.0 - h) * exterior_energy(grad_u, ext)


# ---------------------------------------------------------------------------
# Boundary conditions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedDisplacement:
    """Both displacement components prescribed; value is a vector or x -> vector."""

    value: object = (0.0, 0.0)


@dataclass(frozen=True)
class FixedComponent:
    """One displacement component prescribed (axis 0 = x, 1 = y)."""

    axis: int
    value: object = 0.0


@dataclass(frozen=True)
class Traction:
    """Prescribed traction; diffuse tractions act through |grad H_l(phi)| over R."""

    value: object
    diffuse: bool = False


@dataclass(frozen=True)
class Free:
    """Traction-free boundary."""


@dataclass
class BoundaryConditions:
    """Exactly one condition per boundary tag."""

    conditions: dict[str, object]

    def __post_init__(self):
        for tag, cond in self.conditions.items():
            if not isinstance(cond, (FixedDisplacement, FixedComponent, Traction, Free)):
                raise TypeError(f"unknown boundary condition for '{tag}': {cond!r}")

    def items(self):
        return self.conditions.items()


def _eval_bc_value(value, coords, ncomp):
    if callable(value):
        out = np.asarray([value(x) for x in coords], float)
    else:
        out = np.broadcast_to(np.asarray(value, float), (len(coords),) + ((ncomp,) if ncomp > 1 else ())).copy()
    return out.reshape(len(coords), ncomp) if ncomp > 1 else out.reshape(len(coords))


def dirichlet_map(mesh: Mesh2D, bcs: BoundaryConditions, degree: int):
    """Constrained vector-dof ids and values from the Dirichlet conditions."""
    fixed: dict[int, float] = {}
    for tag, cond in bcs.items():
        if isinstance(cond, (Traction, Free)):
            continue
        sites = mesh.boundary_dofs(tag, degree)
        coords = mesh.dof_coords(degree)[sites]
        if isinstance(cond, FixedDisplacement):
            vals = _eval_bc_value(cond.value, coords, 2)
            for s, v in zip(sites, vals):
                for c in range(2):
                    _set_fixed(fixed, 2 * int(s) + c, float(v[c]))
        elif isinstance(cond, FixedComponent):
            vals = _eval_bc_value(cond.value, coords, 1)
            for s, v in zip(sites, vals):
                _set_fixed(fixed, 2 * int(s) + cond.axis, float(v))
    ids = np.array(sorted(fixed), np.int64)
    vals = np.array([fixed[i] for i in ids])
    return ids, vals


def _set_fixed(fixed, dof, value):
    if dof in fixed and abs(fixed[dof] - value) > 1e-12:
        raise ValueError(f"conflicting Dirichlet values at dof {dof}")
    fixed[dof] = value


# ---------------------------------------------------------------------------
# Incremental energy functional
# ---------------------------------------------------------------------------

class _NeoBranch:
    """rho-weighted neo-Hookean contribution with frozen right factor A."""

    def __init__(self, mu, lam, A_qp, weight_qp):
        self.mu = float(mu)
        self.lam = float(lam)
        self.A = A_qp  # (n_tri, nq, 2, 2)
        self.w = weight_qp  # (n_tri, nq), includes rho_g and the blend weight

    def energy(self, G):
        F = np.matmul(np.eye(2) + G, self.A)
        return self.w * neo_hookean_energy_batch(F, self.mu, self.lam)

    def _inverse(self, F):
        J = _det2(F)
        iF = np.empty_like(F)
        iF[..., 0, 0] = F[..., 1, 1]
        iF[..., 0, 1] = -F[..., 0, 1]
        iF[..., 1, 0] = -F[..., 1, 0]
        iF[..., 1, 1] = F[..., 0, 0]
        iF /= J[..., None, None]
        return J, iF

    def piola(self, G):
        """d/dG of the weighted energy, shape (n_tri, nq, 2, 2)."""
        F = np.matmul(np.eye(2) + G, self.A)
        J, iF = self._inverse(F)
        iFT = np.swapaxes(iF, -1, -2)
        dW = self.mu * (F - iFT) + (self.lam * (J - 1.0) * J)[..., None, None] * iFT
        return self.w[..., None, None] * np.matmul(dW, np.swapaxes(self.A, -1, -2))

    def element_hessian(self, G, wq, Gshape):
        """Element tangent matrices (n_tri, n_loc, 2, n_loc, 2).

        Exploits the low-rank structure of the neo-Hookean tangent:
        K = mu I x (A A^T) + c2 Q x Q (transposed pairing) + c3 Q x Q
        with Q = F^{-T} A^T, contracted against shape gradients through
        batched matmuls instead of a fourth-order tensor.
        """
        n_tri, nq, n_loc, _ = Gshape.shape
        F = np.matmul(np.eye(2) + G, self.A)
        J, iF = self._inverse(F)
        Q = np.matmul(np.swapaxes(iF, -1, -2), np.swapaxes(self.A, -1, -2))
        w = wq * self.w
        c2 = w * (self.mu - self.lam * (J - 1.0) * J)
        c3 = w * (self.lam * (2.0 * J - 1.0) * J)

        # (Q grad N_a)_p per quadrature point: (t, q, n_loc, 2)
        qg = np.matmul(Gshape, np.swapaxes(Q, -1, -2))
        # mu-term: s_ab = sum_q w mu grad N_a . (A A^T) grad N_b
        GB = np.matmul(Gshape, self.A)  # A^T grad N_a, as (t, q, n_loc, 2)
        GBw = GB * (w * self.mu)[..., None, None]
        P1 = GBw.transpose(0, 2, 1, 3).reshape(n_tri, n_loc, nq * 2)
        P2 = GB.transpose(0, 2, 1, 3).reshape(n_tri, n_loc, nq * 2)
        s_ab = np.matmul(P1, P2.transpose(0, 2, 1))
        H = np.zeros((n_tri, n_loc, 2, n_loc, 2))
        H[:, :, 0, :, 0] = s_ab
        H[:, :, 1, :, 1] = s_ab

        # c2-term: sum_q c2 (qg_b)_p (qg_a)_r ; c3-term: sum_q c3 (qg_a)_p (qg_b)_r
        U = qg.transpose(0, 2, 3, 1).reshape(n_tri, n_loc * 2, nq)  # rows (a, r)
        t2 = np.matmul(U * c2[:, None, :], U.transpose(0, 2, 1))
        H += t2.reshape(n_tri, n_loc, 2, n_loc, 2).transpose(0, 1, 4, 3, 2)
        t3 = np.matmul(U * c3[:, None, :], U.transpose(0, 2, 1))
        H += t3.reshape(n_tri, n_loc, 2, n_loc, 2)
        return H


class _LinearBranch:
    """Weighted soft linear-elastic contribution (constant tangent)."""

    def __init__(self, mu_c, lam_c, weight_qp):
        self.mu_c = float(mu_c)
        self.lam_c = float(lam_c)
        self.w = weight_qp

    def energy(self, G):
        S = G + np.swapaxes(G, -1, -2)
        tr = G[..., 0, 0] + G[..., 1, 1]
        return self.w * (0.25 * self.mu_c * np.sum(S * S, axis=(-2, -1))
                         + 0.5 * self.lam_c * tr * tr)

    def piola(self, G):
        S = G + np.swapaxes(G, -1, -2)
        tr = G[..., 0, 0] + G[..., 1, 1]
        return self.w[..., None, None] * (self.mu_c * S + self.lam_c * tr[..., None, None] * np.eye(2))

    def element_hessian(self, G, wq, Gshape):
        """Constant element tangent of the quadratic exterior energy."""
        n_tri, nq, n_loc, _ = Gshape.shape
        w = wq * self.w
        dot = np.einsum("tq,tqaj,tqbj->tab", w * self.mu_c, Gshape, Gshape, optimize=True)
        H = np.zeros((n_tri, n_loc, 2, n_loc, 2))
        H[:, :, 0, :, 0] = dot
        H[:, :, 1, :, 1] = dot
        H += np.einsum("tq,tqar,tqbp->tapbr", w * self.mu_c, Gshape, Gshape, optimize=True)
        H += np.einsum("tq,tqap,tqbr->tapbr", w * self.lam_c, Gshape, Gshape, optimize=True)
        return H


class IncrementalEnergy:
    """Discrete incremental functional of the displacement increment.

    Operates on the vector of free displacement dofs; Dirichlet dofs are
    eliminated and carried as fixed values. `value` returns +inf for states
    that invert the solid, which the Newton line search treats as a rejected
    trial step.
    """

    def __init__(self, mesh: Mesh2D, branches, degree: int, load_vector, load_const,
                 fixed_ids, fixed_vals):
        self.mesh = mesh
        self.branches = branches
        self.degree = degree
        self.rule = triangle_rule(4)
        self.n_dofs = 2 * mesh.n_dofs(degree)
        self.load = load_vector  # energy -= load . u + load_const
        self.load_const = load_const

        self._dofs = element_dofs(mesh, degree)
        n_loc = self._dofs.shape[1]
        lam = np.broadcast_to(self.rule.points, (mesh.n_triangles,) + self.rule.points.shape)
        self._Gshape = shape_grads(degree, lam.transpose(1, 0, 2), mesh.grad_bary).transpose(1, 0, 2, 3)
        self._wq = self.rule.weights[None, :] * (2.0 * mesh.areas)[:, None]

        vd = (2 * self._dofs[:, :, None] + np.arange(2)[None, None, :]).reshape(-1, 2 * n_loc)
        self._vdofs = vd
        self._rows = np.repeat(vd, 2 * n_loc, axis=1).ravel()
        self._cols = np.tile(vd, (1, 2 * n_loc)).ravel()
        self._linear_elem = None

        self.fixed_ids = fixed_ids
        self.fixed_vals = fixed_vals
        mask = np.ones(self.n_dofs, bool)
        mask[fixed_ids] = False
        self.free_ids = np.flatnonzero(mask)

    # -- dof bookkeeping -------------------------------------------------

    def full_vector(self, x_free: np.ndarray) -> np.ndarray:
        u = np.zeros(self.n_dofs)
        u[self.free_ids] = x_free
        u[self.fixed_ids] = self.fixed_vals
        return u

    def initial_guess(self) -> np.ndarray:
        return np.zeros(len(self.free_ids))

    def displacement_field(self, x_free: np.ndarray) -> Field:
        u = self.full_vector(x_free).reshape(-1, 2)
        return Field(self.mesh, "vector", self.degree, u)

    def _grad_u_qp(self, u_full: np.ndarray) -> np.ndarray:
        ue = u_full.reshape(-1, 2)[self._dofs]  # (n_tri, n_loc, 2)
        return np.matmul(ue.transpose(0, 2, 1)[:, None], self._Gshape)

    # -- functional interface ---------------------------------------------

    def value(self, x_free: np.ndarray) -> float:
        u = self.full_vector(x_free)
        G = self._grad_u_qp(u)
        dens = sum(b.energy(G) for b in self.branches)
        if not np.all(np.isfinite(dens)):
            return np.inf
        return float(np.sum(self._wq * dens)) - float(self.load @ u) - self.load_const

    def gradient(self, x_free: np.ndarray) -> np.ndarray:
        u = self.full_vector(x_free)
        G = self._grad_u_qp(u)
        P = sum(b.piola(G) for b in self.branches)  # (t, q, 2, 2)
        n_tri, nq, n_loc, _ = self._Gshape.shape
        Pw = (P * self._wq[..., None, None]).transpose(0, 1, 3, 2).reshape(n_tri, nq * 2, 2)
        Gs = self._Gshape.transpose(0, 2, 1, 3).reshape(n_tri, n_loc, nq * 2)
        elem = np.matmul(Gs, Pw)  # (t, n_loc, 2)
        g = np.zeros(self.n_dofs)
        np.add.at(g, self._vdofs, elem.reshape(len(elem), -1))
        g -= self.load
        return g[self.free_ids]

    def hessian(self, x_free: np.ndarray) -> sp.csr_matrix:
        u = self.full_vector(x_free)
        G = self._grad_u_qp(u)
        elem = None
        for b in self.branches:
            if isinstance(b, _LinearBranch):
                if self._linear_elem is None:
                    self._linear_elem = b.element_hessian(G, self._wq, self._Gshape)
                eb = self._linear_elem
            else:
                eb = b.element_hessian(G, self._wq, self._Gshape)
            elem = eb if elem is None else elem + eb
        n_loc = self._dofs.shape[1]
        vals = elem.reshape(-1, (2 * n_loc) ** 2).ravel()
        H = sp.coo_matrix((vals, (self._rows, self._cols)),
                          shape=(self.n_dofs, self.n_dofs)).tocsr()
        return H[self.free_ids][:, self.free_ids]


def _traction_load(mesh: Mesh2D, degree: int, tag: str, value) -> tuple[np.ndarray, float]:
    """Exact edge integral of t_b . (x + u) on a mesh-aligned boundary."""
    load = np.zeros(2 * mesh.n_dofs(degree))
    const = 0.0
    gp = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
    edge_lookup = None
    if degree == 2:
        edge_lookup = {tuple(e): i for i, e in enumerate(mesh.edges)}
    for n0, n1 in mesh.boundary_edges[tag]:
        a, b = mesh.nodes[n0], mesh.nodes[n1]
        length = float(np.linalg.norm(b - a))
        for xi in gp:
            xg = (1 - xi) * a + xi * b
            t = np.asarray(value(xg) if callable(value) else value, float)
            wgt = 0.5 * length
            const += wgt * float(t @ xg)
            if degree == 1:
                shp = [(n0, 1 - xi), (n1, xi)]
            else:
                eid = edge_lookup[tuple(sorted((n0, n1)))]
                shp = [
                    (n0, (1 - xi) * (1 - 2 * xi)),
                    (n1, xi * (2 * xi - 1)),
                    (mesh.n_nodes + eid, 4 * xi * (1 - xi)),
                ]
            for site, N in shp:
                load[2 * site: 2 * site + 2] += wgt * N * t
    return load, const


def assemble_incremental_energy(state: State, bcs: BoundaryConditions,
                                materials: SolidExteriorBlend,
                                body_force: Field | None = None,
                                degree: int = 1) -> IncrementalEnergy:
    """Build the incremental functional I[u] for the current state.

    I[u] = int rho_g (W_blend - b.(x+u)) - diffuse traction term
           - exact boundary-traction terms, with Dirichlet data eliminated.
    """
    mesh = state.mesh
    rule = triangle_rule(4)
    l = materials.l

    phi_q = values_at_qp(state.phi.phi, rule)
    rho_q = values_at_qp(state.rho, rule)
    Fe_q = values_at_qp(state.Fe, rule)
    h = smooth_heaviside(phi_q, l)

    branches = [
        _NeoBranch(materials.solid.mu, materials.solid.lam, Fe_q, rho_q * h),
        _LinearBranch(materials.exterior.mu_c, materials.exterior.lam_c, rho_q * (1.0 - h)),
    ]

    from .fields import qp_geometry  # local import to keep module load light

    pts, wq = qp_geometry(mesh, rule)
    load = np.zeros(2 * mesh.n_dofs(degree))
    const = 0.0

    if body_force is not None:
        if body_force.mesh is not mesh:
            raise ValueError("body force lives on a different mesh")
        b_q = values_at_qp(body_force, rule)
        dens = rho_q[..., None] * b_q  # rho_g b at quadrature points
        load += _vector_load(mesh, degree, rule, dens)
        const += float(np.einsum("tq,tqd,tqd->", wq, dens, pts))

    for tag, cond in bcs.items():
        if isinstance(cond, Traction):
            if cond.diffuse:
                from .phase import heaviside_gradient_magnitude_at_qp

                s_q = heaviside_gradient_magnitude_at_qp(state.phi, l, rule)
                t_q = _traction_at_qp(cond.value, pts)
                dens = s_q[..., None] * t_q
                load += _vector_load(mesh, degree, rule, dens)
                const += float(np.einsum("tq,tqd,tqd->", wq, dens, pts))
            else:
                lv, lc = _traction_load(mesh, degree, tag, cond.value)
                load += lv
                const += lc

    fixed_ids, fixed_vals = dirichlet_map(mesh, bcs, degree)
    return IncrementalEnergy(mesh, branches, degree, load, const, fixed_ids, fixed_vals)


def _traction_at_qp(value, pts):
    if callable(value):
        flat = pts.reshape(-1, 2)
        return np.asarray([value(x) for x in flat], float).reshape(pts.shape)
    return np.broadcast_to(np.asarray(value, float), pts.shape)


def _vector_load(mesh: Mesh2D, degree: int, rule, dens_qp: np.ndarray) -> np.ndarray:
    """Assemble int dens . (test function) into the flat vector-dof layout."""
    N = shape_values(degree, rule.points)
    wq = rule.weights[None, :] * (2.0 * mesh.areas)[:, None]
    elem = np.einsum("tq,tqd,qa->tad", wq, dens_qp, N)
    load = np.zeros((mesh.n_dofs(degree), 2))
    np.add.at(load, element_dofs(mesh, degree), elem)
    return load.ravel()


def warm_start_guess(fn: IncrementalEnergy, u_prev: Field | None):
    """Free-dof start vector from a previous displacement, with the cold scale.

    Falls back to zero when the previous increment is infeasible for the
    current state (inverted somewhere) or lives on another discretization.
    """
    x0 = fn.initial_guess()
    scale = max(1.0, float(np.linalg.norm(fn.gradient(x0))))
    if u_prev is not None and u_prev.degree == fn.degree and u_prev.mesh is fn.mesh:
        cand = u_prev.data.ravel()[fn.free_ids]
        if np.isfinite(fn.value(cand)):
            return cand, scale
    return x0, scale


def solve_equilibrium(state: State, bcs: BoundaryConditions, materials: SolidExteriorBlend,
                      body_force: Field | None = None, tol: float = 1e-8,
                      max_iter: int = 50, degree: int = 1,
                      warm_start: Field | None = None):
    """Minimize the incremental energy; returns (u Field, NewtonInfo)."""
    fn = assemble_incremental_energy(state, bcs, materials, body_force, degree)
    x0, scale = warm_start_guess(fn, warm_start)
    x, info = newton_minimize(fn, x0, tol=tol, max_iter=max_iter, tol_scale=scale)
    return fn.displacement_field(x), info
