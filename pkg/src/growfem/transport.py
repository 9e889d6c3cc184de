"""Semi-Lagrangian transport and the incremental source updates for Fe and rho.

Transport updates a field at every fixed dof site by interpolating the old
field at the back-traced point x - v(x) dt. Points whose back-trace leaves
the computational rectangle take their value from an out-of-domain policy:
a constant inflow state (growth boundaries) or the nearest boundary value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Field, eval_at, grads_at_qp, project_element_to_dofs
from .mesh import Mesh2D, locate_points, triangle_rule

__all__ = [
    "ConstantInflow",
    "NearestBoundaryValue",
    "TransportError",
    "semi_lagrangian_advect",
    "source_update_Fe",
    "source_update_rho",
    "BacktracePlan",
    "backtrace_plan",
    "apply_plan",
    "nodal_velocity_gradient",
]


class TransportError(RuntimeError):
    """A transport or source update hit an invalid state (for example det <= 0)."""


@dataclass(frozen=True)
class ConstantInflow:
    """Out-of-domain back-traces take this constant value."""

    value: float | np.ndarray


@dataclass(frozen=True)
class NearestBoundaryValue:
    """Out-of-domain back-traces take the field value at the boundary projection."""


def _values_at_sites(v: Field, degree: int) -> np.ndarray:
    """Field values at the dof sites of a (possibly different) degree."""
    mesh = v.mesh
    if v.degree == degree:
        return v.data
    if v.degree == 2 and degree == 1:
        return v.data[: mesh.n_nodes]
    if v.degree == 1 and degree == 2:
        mid = 0.5 * (v.data[mesh.edges[:, 0]] + v.data[mesh.edges[:, 1]])
        return np.concatenate([v.data, mid], axis=0)
    raise ValueError("unsupported degree combination")


@dataclass
class BacktracePlan:
    """Shared point-location result for transporting several fields at once."""

    mesh: Mesh2D
    degree: int
    tri: np.ndarray
    bary: np.ndarray
    inside: np.ndarray
    clamped_tri: np.ndarray
    clamped_bary: np.ndarray


def backtrace_plan(mesh: Mesh2D, degree: int, v: Field, dt: float) -> BacktracePlan:
    """Locate x_i - v(x_i) dt for every dof site once."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    vel = _values_at_sites(v, degree)
    if not np.all(np.isfinite(vel)):
        raise TransportError("velocity field contains non-finite values")
    pts = mesh.dof_coords(degree) - vel * dt
    tri, bary, inside = locate_points(mesh, pts)
    out = ~inside
    ct = np.zeros(0, np.int64)
    cb = np.zeros((0, 3))
    if np.any(out):
        clamped = mesh.clamp_to_rect(pts[out])
        ct, cb, ok = locate_points(mesh, clamped)
        if not np.all(ok):  # pragma: no cover - clamp always lands inside
            raise TransportError("boundary projection failed to locate")
    return BacktracePlan(mesh, degree, tri, bary, inside, ct, cb)


def apply_plan(f: Field, plan: BacktracePlan, policy) -> Field:
    """Interpolate f through a back-trace plan, filling Outside via the policy."""
    if f.mesh is not plan.mesh or f.degree != plan.degree:
        raise ValueError("field does not match the back-trace plan")
    new = np.empty_like(f.data)
    ins = plan.inside
    new[ins] = eval_at(f, plan.tri[ins], plan.bary[ins])
    if np.any(~ins):
        if isinstance(policy, ConstantInflow):
            val = np.asarray(policy.value, float)
            if val.shape != f.data.shape[1:]:
                raise ValueError(
                    f"inflow value shape {val.shape} does not match field rank {f.rank}"
                )
            if not np.all(np.isfinite(val)):
                raise ValueError("inflow value must be finite")
            new[~ins] = val
        elif isinstance(policy, NearestBoundaryValue):
            new[~ins] = eval_at(f, plan.clamped_tri, plan.clamped_bary)
        else:
            raise TypeError(f"unknown out-of-domain policy {policy!r}")
    return f.with_data(new)


def semi_lagrangian_advect(f: Field, v: Field, dt: float, policy) -> Field:
    """One explicit semi-Lagrangian step: f_new(x_i) = f(x_i - v(x_i) dt)."""
    plan = backtrace_plan(f.mesh, f.degree, v, dt)
    return apply_plan(f, plan, policy)


# ---------------------------------------------------------------------------
# Source updates
# ---------------------------------------------------------------------------

def nodal_velocity_gradient(u: Field, degree: int = 1) -> np.ndarray:
    """grad(u) localized at dof sites: element means, area-averaged to sites."""
    rule = triangle_rule(1)
    g = grads_at_qp(u, rule)[:, 0]  # (n_tri, 2, 2); exact element mean
    return project_element_to_dofs(u.mesh, degree, g)


def source_update_Fe(Fe_g: Field, u: Field) -> Field:
    """Incremental elastic-deformation update Fe <- (I + grad u) Fe."""
    gu = nodal_velocity_gradient(u, Fe_g.degree)
    F = np.eye(2) + gu
    return Fe_g.with_data(np.einsum("nij,njk->nik", F, Fe_g.data))


def source_update_rho(rho_g: Field, u: Field) -> Field:
    """Incremental density update rho <- rho / det(I + grad u)."""
    gu = nodal_velocity_gradient(u, rho_g.degree)
    F = np.eye(2) + gu
    det = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    if np.any(det <= 0):
        i = int(np.argmin(det))
        x = rho_g.mesh.dof_coords(rho_g.degree)[i]
        raise TransportError(
            f"det(I + grad u) = {det[i]:.3e} <= 0 at {x}; "
            "the increment is too large for this time step"
        )
    return rho_g.with_data(rho_g.data / det)
