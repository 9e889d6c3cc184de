"""Time stepping for surface growth: unconstrained and constrained variants.

One unconstrained step advects the phase function with the growth velocity,
assigns the accreted material its prescribed density and elastic deformation,
relaxes to mechanical equilibrium, then applies the source and transport
updates driven by the resulting displacement and filters the phase function.

Constrained growth (growth on a boundary whose displacement is prescribed)
first solves with a boundary value that makes room for the added material,
transports, fills in the accreted material, and solves again with the true
boundary data.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .elasticity import (
    BoundaryConditions,
    FixedDisplacement,
    SolidExteriorBlend,
    solve_equilibrium,
)
from .fields import Field
from .phase import PhaseField, PhaseParams, regularize
from .state import State
from .transport import (
    ConstantInflow,
    apply_plan,
    backtrace_plan,
    semi_lagrangian_advect,
    source_update_Fe,
    source_update_rho,
)

__all__ = [
    "GrowthSpec",
    "InflowPolicies",
    "Unconstrained",
    "Constrained",
    "StepFailure",
    "grow_phase",
    "fill_accreted",
    "step_unconstrained",
    "step_constrained",
]


class StepFailure(RuntimeError):
    """A stage of a time step failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"step failed during '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class InflowPolicies:
    """Out-of-domain policy for each transported field."""

    phi: object
    rho: object
    Fe: object


@dataclass(frozen=True)
class Unconstrained:
    """Growth at boundaries with no prescribed displacement."""


@dataclass(frozen=True)
class Constrained:
    """Growth on a displacement-prescribed boundary.

    tag      : boundary whose Dirichlet data the growth interacts with
    velocity : physical growth velocity v_g on that boundary (vector or x -> vector)
    window   : optional predicate restricting the growth strip along the boundary
    """

    tag: str
    velocity: object
    window: object = None


@dataclass
class GrowthSpec:
    """Growth data for one (already time-sampled) step."""

    growth_velocity: Field
    accreted_density: float
    accreted_Fe: np.ndarray
    inflow: InflowPolicies
    mode: object = dc_field(default_factory=Unconstrained)

    def __post_init__(self):
        self.accreted_Fe = np.asarray(self.accreted_Fe, float)
        if self.accreted_Fe.shape != (2, 2) or np.linalg.det(self.accreted_Fe) <= 0:
            raise ValueError("accreted elastic deformation must be 2x2 with positive det")
        if self.accreted_density <= 0:
            raise ValueError("accreted density must be positive")
        if self.growth_velocity.rank != "vector":
            raise ValueError("growth velocity must be a vector field")


def grow_phase(state: State, spec: GrowthSpec, dt: float) -> PhaseField:
    """Advect the phase function with the growth velocity only (no mechanics)."""
    phi_new = semi_lagrangian_advect(state.phi.phi, spec.growth_velocity, dt, spec.inflow.phi)
    return PhaseField(phi_new)


def fill_accreted(state_before: State, phi_after: PhaseField, spec: GrowthSpec):
    """Assign accreted-material values where the phase flipped exterior -> body."""
    accreted = (state_before.phi.phi.data < 0.0) & (phi_after.phi.data >= 0.0)
    rho_g = state_before.rho.copy()
    Fe_g = state_before.Fe.copy()
    rho_g.data[accreted] = spec.accreted_density
    Fe_g.data[accreted] = spec.accreted_Fe
    return rho_g, Fe_g


def _mechanics_update(phi: PhaseField, rho: Field, Fe: Field, u: Field, inflow: InflowPolicies):
    """Source + transport update of (phi, rho, Fe) driven by the increment u."""
    Fe_s = source_update_Fe(Fe, u)
    rho_s = source_update_rho(rho, u)
    plan = backtrace_plan(phi.mesh, phi.phi.degree, u, 1.0)
    Fe_n = apply_plan(Fe_s, plan, inflow.Fe)
    rho_n = apply_plan(rho_s, plan, inflow.rho)
    phi_n = PhaseField(apply_plan(phi.phi, plan, inflow.phi))
    return phi_n, rho_n, Fe_n


def _stage(name, fn):
    try:
        return fn()
    except StepFailure:
        raise
    except Exception as exc:
        raise StepFailure(name, exc) from exc


def step_unconstrained(state: State, spec: GrowthSpec, bcs: BoundaryConditions,
                       materials: SolidExteriorBlend, phase_params: PhaseParams,
                       dt: float, body_force: Field | None = None,
                       newton_tol: float = 1e-8, degree: int = 1) -> State:
    """One unconstrained growth step from t to t + dt."""
    if not isinstance(spec.mode, Unconstrained):
        raise ValueError("spec.mode must be Unconstrained")

    phi_g = _stage("grow_phase", lambda: grow_phase(state, spec, dt))
    rho_g, Fe_g = _stage("fill_accreted", lambda: fill_accreted(state, phi_g, spec))
    grown = State(phi_g, rho_g, Fe_g, state.u_last, state.t)
    u, _ = _stage("solve_equilibrium", lambda: solve_equilibrium(
        grown, bcs, materials, body_force, tol=newton_tol, degree=degree))
    phi_t, rho_n, Fe_n = _stage("mechanics_update", lambda: _mechanics_update(
        phi_g, rho_g, Fe_g, u, spec.inflow))
    phi_n = _stage("regularize", lambda: regularize(phi_t, phase_params))
    new = State(phi_n, rho_n, Fe_n, u, state.t + dt)
    _stage("admissibility", lambda: new.check_admissible(materials.l))
    return new


def _make_room_bcs(bcs: BoundaryConditions, mode: Constrained, dt: float) -> BoundaryConditions:
    """Replace the tagged Dirichlet value by (V_b - v_g) dt over the growth strip."""
    true_cond = bcs.conditions.get(mode.tag)
    if not isinstance(true_cond, FixedDisplacement):
        raise ValueError(f"constrained growth requires FixedDisplacement on '{mode.tag}'")

    def modified(x):
        base = true_cond.value(x) if callable(true_cond.value) else true_cond.value
        base = np.asarray(base, float)
        if mode.window is not None and not mode.window(x):
            return base
        vg = mode.velocity(x) if callable(mode.velocity) else mode.velocity
        return base - dt * np.asarray(vg, float)

    conds = dict(bcs.conditions)
    conds[mode.tag] = FixedDisplacement(modified)
    return BoundaryConditions(conds)


def step_constrained(state: State, spec: GrowthSpec, bcs: BoundaryConditions,
                     materials: SolidExteriorBlend, phase_params: PhaseParams,
                     dt: float, body_force: Field | None = None,
                     newton_tol: float = 1e-8, degree: int = 1) -> State:
    """One constrained growth step (growth on a displacement-prescribed boundary)."""
    mode = spec.mode
    if not isinstance(mode, Constrained):
        raise ValueError("spec.mode must be Constrained")

    bcs_room = _make_room_bcs(bcs, mode, dt)
    cur = State(state.phi, state.rho, state.Fe, state.u_last, state.t)

    u1, _ = _stage("make_room_equilibrium", lambda: solve_equilibrium(
        cur, bcs_room, materials, body_force, tol=newton_tol, degree=degree))
    phi1, rho1, Fe1 = _stage("make_room_update", lambda: _mechanics_update(
        cur.phi, cur.rho, cur.Fe, u1, spec.inflow))
    cur = State(phi1, rho1, Fe1, u1, state.t)

    phi_g = _stage("grow_phase", lambda: grow_phase(cur, spec, dt))
    rho_g, Fe_g = _stage("fill_accreted", lambda: fill_accreted(cur, phi_g, spec))
    cur = State(phi_g, rho_g, Fe_g, u1, state.t)

    u2, _ = _stage("solve_equilibrium", lambda: solve_equilibrium(
        cur, bcs, materials, body_force, tol=newton_tol, degree=degree))
    phi2, rho2, Fe2 = _stage("mechanics_update", lambda: _mechanics_update(
        cur.phi, cur.rho, cur.Fe, u2, spec.inflow))
    phi_n = _stage("regularize", lambda: regularize(phi2, phase_params))

    new = State(phi_n, rho2, Fe2, u2, state.t + dt)
    _stage("admissibility", lambda: new.check_admissible(materials.l))
    return new
