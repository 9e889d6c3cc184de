"""Stress-driven melting and refreezing of a two-phase solid/melt system.

The phase function convention here is +1 for melt and -1 for solid. The
interface moves by a linear kinetic law in the thermodynamic driving force
derived from a Helmholtz free energy with thermal, elastic, and interfacial
contributions; the density jump between the phases makes stress do work on
the transformation, which is what produces regelation under a moving load.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly
from .elasticity import (
    BoundaryConditions,
    IncrementalEnergy,
    NeoHookeanParams,
    _NeoBranch,
    _vector_load,
    dirichlet_map,
    neo_hookean_energy,
    neo_hookean_energy_batch,
)
from .fields import (
    Field,
    grads_at_qp,
    project_element_to_dofs,
    qp_geometry,
    values_at_qp,
)
from .mesh import triangle_rule
from .phase import PhaseField, smooth_heaviside, smooth_heaviside_deriv
from .solvers import NewtonFailure, newton_minimize
from .state import State
from .transport import NearestBoundaryValue
from .growth import InflowPolicies, StepFailure, _mechanics_update, _stage

__all__ = [
    "ThermoParams",
    "TemperatureField",
    "WireLoad",
    "f_thermal",
    "f_elastic",
    "f_interfacial",
    "driving_force",
    "kinetic_velocity",
    "evolve_phase_mixed",
    "wire_body_force",
    "update_y0",
    "step_regelation",
    "cauchy_stress_blended",
    "total_free_energy",
]


@dataclass(frozen=True)
class ThermoParams:
    """Constants of the thermomechanical phase-change model.

    Stress-like quantities (Lame parameters, latent-heat group) share one
    unit system with the densities; the kinetic mobility kappa absorbs the
    remaining scale so that kappa * dt is the dimensionless group that
    controls how far the interface moves per step.
    """

    L: float
    c_p: float
    T_m0: float
    kappa: float
    kappa1: float
    kappa2: float
    rho_solid: float
    rho_melt: float
    solid: NeoHookeanParams
    melt: NeoHookeanParams
    l: float = 2.0
    d: int = 2

    def __post_init__(self):
        if min(self.kappa, self.kappa1, self.kappa2) <= 0:
            raise ValueError("kappa, kappa1, kappa2 must be positive")
        if self.rho_solid == self.rho_melt:
            raise ValueError("regelation requires a density jump between the phases")
        if self.rho_solid <= 0 or self.rho_melt <= 0:
            raise ValueError("phase densities must be positive")

    @property
    def stretch_scale(self) -> float:
        """(rho_solid/rho_melt)^(1/d): rescales the solid's stress-free state."""
        return (self.rho_solid / self.rho_melt) ** (1.0 / self.d)

    @property
    def interface_width(self) -> float:
        """Equilibrium tanh width sqrt(kappa1/kappa2) of the interfacial energy."""
        return float(np.sqrt(self.kappa1 / self.kappa2))

    @property
    def g_min(self) -> float:
        return 1e-3 / self.interface_width


@dataclass
class TemperatureField:
    """Fixed-in-time undercooling theta_u(x) = L (T_m0 - T(x)) / T_m0 per unit mass."""

    undercooling: Field

    def __post_init__(self):
        if self.undercooling.rank != "scalar":
            raise ValueError("undercooling must be a scalar field")
        if not np.all(np.isfinite(self.undercooling.data)):
            raise ValueError("undercooling must be finite")

    def temperature(self, p: ThermoParams) -> np.ndarray:
        return p.T_m0 * (1.0 - self.undercooling.data / p.L)


@dataclass(frozen=True)
class WireLoad:
    """Weighted-wire load pressing on the interface; y0 tracks the wire height."""

    magnitude: float = 48.0
    radius: float = 0.02
    sharpness: float = 1e4
    y0: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("wire radius must be positive")

    def with_y0(self, y0: float) -> "WireLoad":
        return replace(self, y0=float(y0))


# ---------------------------------------------------------------------------
# Free-energy terms
# ---------------------------------------------------------------------------

def f_thermal(T_point: float, phi_value: float, p: ThermoParams):
    """Thermal free energy c_p T ln(T_m0/T) + H_l(phi) L (T_m0 - T)/T_m0."""
    T = np.asarray(T_point, float)
    if np.any(T <= 0):
        raise ValueError("temperature must be positive")
    h = smooth_heaviside(phi_value, p.l)
    return p.c_p * T * np.log(p.T_m0 / T) + h * p.L * (p.T_m0 - T) / p.T_m0


def f_elastic(Fe, phi_value, p: ThermoParams):
    """(1 - H_l) W_solid(scale * Fe) + H_l W_melt(Fe); scale absorbs the density jump."""
    Fe = np.asarray(Fe, float)
    h = smooth_heaviside(phi_value, p.l)
    Ws = neo_hookean_energy(p.stretch_scale * Fe, p.solid)
    Wm = neo_hookean_energy(Fe, p.melt)
    return (1.0 - h) * Ws + h * Wm


def f_interfacial(grad_phi, phi_value, p: ThermoParams):
    """kappa1 |grad phi|^2 + kappa2 (phi^2 - 1)^2."""
    g = np.asarray(grad_phi, float)
    phi = np.asarray(phi_value, float)
    return p.kappa1 * np.sum(g * g, axis=-1) + p.kappa2 * (phi * phi - 1.0) ** 2


def _elastic_gap_qp(state: State, p: ThermoParams, rule) -> np.ndarray:
    """W_melt(Fe) - W_solid(scale Fe) at quadrature points."""
    Fe_q = values_at_qp(state.Fe, rule)
    Wm = neo_hookean_energy_batch(Fe_q, p.melt.mu, p.melt.lam)
    Ws = neo_hookean_energy_batch(p.stretch_scale * Fe_q, p.solid.mu, p.solid.lam)
    return Wm - Ws


def _lumped_mass(mesh, degree, rule):
    ones = np.ones((mesh.n_triangles, len(rule.weights)))
    return assembly.scalar_load_vector(mesh, ones, degree, rule)


def _driving_force_load(phi_data: np.ndarray, state: State, theta_qp, p: ThermoParams, rule):
    """Weak driving-force vector b_i for given phase coefficients."""
    mesh = state.mesh
    deg = state.phi.phi.degree
    phi_f = state.phi.phi.with_data(phi_data)
    phi_q = values_at_qp(phi_f, rule)
    rho_q = values_at_qp(state.rho, rule)
    hd = smooth_heaviside_deriv(phi_q, p.l)
    gap = _elastic_gap_qp(state, p, rule)
    bulk = rho_q * (theta_qp * hd + hd * gap + 4.0 * p.kappa2 * phi_q * (phi_q ** 2 - 1.0))
    b = assembly.scalar_load_vector(mesh, bulk, deg, rule)
    # -2 kappa1 div(rho grad phi), by parts with natural boundary conditions
    g_q = grads_at_qp(phi_f, rule)
    b += assembly.scalar_grad_load_vector(mesh, 2.0 * p.kappa1 * rho_q[..., None] * g_q, deg, rule)
    return b


def driving_force(state: State, T: TemperatureField, p: ThermoParams) -> Field:
    """Nodal driving force on phi (positive favours the solid phase).

    rho L theta H' + rho H' (W_melt - W_solid(scaled)) - 2 kappa1 div(rho grad phi)
    + 4 rho kappa2 phi (phi^2 - 1), assembled weakly with a lumped mass.
    """
    rule = triangle_rule(4)
    theta_qp = values_at_qp(T.undercooling, rule)
    b = _driving_force_load(state.phi.phi.data, state, theta_qp, p, rule)
    m = _lumped_mass(state.mesh, state.phi.phi.degree, rule)
    return state.phi.phi.with_data(b / m)


def _nodal_phase_gradient(state: State) -> np.ndarray:
    g = grads_at_qp(state.phi.phi, triangle_rule(1))[:, 0]
    return project_element_to_dofs(state.mesh, state.phi.phi.degree, g)


def kinetic_velocity(state: State, force: Field, p: ThermoParams) -> Field:
    """Interface velocity kappa (grad phi / |grad phi|) * force; zero in the far field."""
    g = _nodal_phase_gradient(state)
    mag = np.linalg.norm(g, axis=1)
    safe = np.where(mag > p.g_min, mag, 1.0)
    n = g / safe[:, None]
    v = p.kappa * force.data[:, None] * n
    v[mag <= p.g_min] = 0.0
    return Field(state.mesh, "vector", state.phi.phi.degree, v)


# ---------------------------------------------------------------------------
# Mixed implicit phase update
# ---------------------------------------------------------------------------

def evolve_phase_mixed(state: State, T: TemperatureField, p: ThermoParams, dt: float,
                       tol: float = 1e-8, max_iter: int = 30) -> PhaseField:
    """Implicit Euler update of phi with the frozen interface measure M = |grad phi|.

    Solves the coupled system for (phi, w): the lumped-mass balance
    m (phi - phi_in) + dt kappa int(w M N) = 0 together with the weak driving
    force m w = b(phi) at the new state. Nodes whose surrounding elements have
    M = 0 keep phi exactly, so no new phase can nucleate.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    mesh = state.mesh
    deg = state.phi.phi.degree
    rule = triangle_rule(4)
    n = mesh.n_dofs(deg)

    gmag = np.linalg.norm(_nodal_phase_gradient(state), axis=1)
    Mfield = np.where(gmag > p.g_min, gmag, 0.0)
    M_qp = values_at_qp(state.phi.phi.with_data(Mfield), rule)
    A_M = assembly.scalar_mass_matrix(mesh, deg, rule, M_qp)
    m = _lumped_mass(mesh, deg, rule)
    theta_qp = values_at_qp(T.undercooling, rule)
    rho_q = values_at_qp(state.rho, rule)
    gap = _elastic_gap_qp(state, p, rule)
    stiff_rho = assembly.scalar_stiffness_matrix(mesh, deg, rule, rho_q)

    phi_in = state.phi.phi.data
    phi = phi_in.copy()
    b0 = _driving_force_load(phi, state, theta_qp, p, rule)
    w = b0 / m

    kdt = p.kappa * dt
    A_over_m = A_M @ sp.diags(1.0 / m)

    # Jacobian frozen at the incoming state; the system is mildly nonlinear,
    # so iterating with one factorization converges in a few sweeps.
    phi_q = values_at_qp(state.phi.phi, rule)
    hdd = -p.l ** 2 * np.tanh(p.l * phi_q) / np.cosh(p.l * phi_q) ** 2
    coeff = rho_q * (theta_qp * hdd + hdd * gap + 4.0 * p.kappa2 * (3.0 * phi_q ** 2 - 1.0))
    dbdphi = assembly.scalar_mass_matrix(mesh, deg, rule, coeff) + 2.0 * p.kappa1 * stiff_rho
    # Schur complement in phi: the w-block mass is (lumped) diagonal
    S = sp.csc_matrix(sp.diags(m) + kdt * (A_over_m @ dbdphi))
    try:
        lu = spla.splu(S, permc_spec="MMD_AT_PLUS_A")
    except Exception as exc:
        raise NewtonFailure(f"mixed phase Jacobian factorization failed: {exc}", np.inf)

    scale = None
    res = np.inf
    for _ in range(max_iter):
        b = _driving_force_load(phi, state, theta_qp, p, rule)
        r1 = m * (phi - phi_in) + kdt * (A_M @ w)
        r2 = m * w - b
        res = float(np.linalg.norm(np.concatenate([r1, r2])))
        if scale is None:
            scale = max(1.0, res)
        if res <= tol * scale:
            return PhaseField(state.phi.phi.with_data(phi))
        dphi = lu.solve(-r1 + kdt * (A_over_m @ r2))
        if not np.all(np.isfinite(dphi)):
            raise NewtonFailure("mixed phase update produced a singular system", res)
        dw = (-r2 + dbdphi @ dphi) / m
        phi = phi + dphi
        w = w + dw
    raise NewtonFailure("mixed phase update did not converge", res)


# ---------------------------------------------------------------------------
# Wire load and stepping
# ---------------------------------------------------------------------------

def wire_body_force(phase: PhaseField, load: WireLoad, l: float) -> Field:
    """Downward body force localized at the interface inside the wire disk."""
    x = phase.mesh.dof_coords(phase.phi.degree)
    r2 = x[:, 0] ** 2 + (x[:, 1] - load.y0) ** 2
    P = np.where(
        r2 < load.radius ** 2,
        load.magnitude
        * smooth_heaviside_deriv(phase.phi.data, l)
        * (1.0 + np.exp(-load.sharpness * r2)),
        0.0,
    )
    b = np.zeros((len(x), 2))
    b[:, 1] = -P
    return Field(phase.mesh, "vector", phase.phi.degree, b)


def update_y0(phase: PhaseField) -> float:
    """Lowest vertical coordinate of the phi = 0 interface."""
    mesh = phase.mesh
    vals = phase.phi.data[: mesh.n_nodes]
    e = mesh.edges
    va, vb = vals[e[:, 0]], vals[e[:, 1]]
    cross = (va * vb < 0) | ((va == 0) & (vb != 0)) | ((vb == 0) & (va != 0))
    ys = []
    if np.any(cross):
        t = va[cross] / (va[cross] - vb[cross])
        ya = mesh.nodes[e[cross, 0], 1]
        yb = mesh.nodes[e[cross, 1], 1]
        ys.append(ya + t * (yb - ya))
    zero_nodes = vals == 0.0
    if np.any(zero_nodes):
        ys.append(mesh.nodes[zero_nodes, 1])
    if not ys:
        raise ValueError("no interface found: phase function does not change sign")
    return float(np.min(np.concatenate(ys)))


def assemble_regelation_energy(state: State, bcs: BoundaryConditions, p: ThermoParams,
                               body_force: Field | None = None,
                               degree: int = 1) -> IncrementalEnergy:
    """Incremental functional with the solid/melt elastic blend of the phase model."""
    mesh = state.mesh
    rule = triangle_rule(4)
    phi_q = values_at_qp(state.phi.phi, rule)
    rho_q = values_at_qp(state.rho, rule)
    Fe_q = values_at_qp(state.Fe, rule)
    h = smooth_heaviside(phi_q, p.l)

    s = p.stretch_scale
    branches = [
        _NeoBranch(p.solid.mu, p.solid.lam, s * Fe_q, rho_q * (1.0 - h)),
        _NeoBranch(p.melt.mu, p.melt.lam, Fe_q, rho_q * h),
    ]

    load = np.zeros(2 * mesh.n_dofs(degree))
    const = 0.0
    if body_force is not None:
        pts, wq = qp_geometry(mesh, rule)
        b_q = values_at_qp(body_force, rule)
        dens = rho_q[..., None] * b_q
        load += _vector_load(mesh, degree, rule, dens)
        const += float(np.einsum("tq,tqd,tqd->", wq, dens, pts))

    fixed_ids, fixed_vals = dirichlet_map(mesh, bcs, degree)
    return IncrementalEnergy(mesh, branches, degree, load, const, fixed_ids, fixed_vals)


def step_regelation(state: State, T: TemperatureField, p: ThermoParams,
                    load: WireLoad | None, bcs: BoundaryConditions, dt: float,
                    newton_tol: float = 1e-8, degree: int = 1) -> State:
    """One regelation step: track wire, relax mechanics, transport, move interface.

    Refrozen material keeps the density and elastic deformation the melt had
    just before the phase flip, so no reassignment happens at conversion.
    """
    body = None
    if load is not None:
        y0 = _stage("update_y0", lambda: update_y0(state.phi))
        load = load.with_y0(y0)
        body = _stage("wire_body_force", lambda: wire_body_force(state.phi, load, p.l))

    def _solve():
        from .elasticity import warm_start_guess

        fn = assemble_regelation_energy(state, bcs, p, body, degree)
        x0, scale = warm_start_guess(fn, state.u_last)
        x, info = newton_minimize(fn, x0, tol=newton_tol, tol_scale=scale)
        return fn.displacement_field(x), info

    u, _ = _stage("solve_equilibrium", _solve)
    inflow = InflowPolicies(NearestBoundaryValue(), NearestBoundaryValue(), NearestBoundaryValue())
    phi_t, rho_n, Fe_n = _stage("mechanics_update", lambda: _mechanics_update(
        state.phi, state.rho, state.Fe, u, inflow))
    moved = State(phi_t, rho_n, Fe_n, u, state.t)
    phi_n = _stage("evolve_phase", lambda: evolve_phase_mixed(moved, T, p, dt))
    new = State(phi_n, rho_n, Fe_n, u, state.t + dt)
    _stage("admissibility", lambda: _check_regelation_state(new, p))
    return new


def _check_regelation_state(state: State, p: ThermoParams) -> None:
    det = np.linalg.det(state.Fe.data)
    if np.any(det <= 0):
        raise ValueError(f"det Fe <= 0 at {int((det <= 0).sum())} sites")
    if np.any(state.rho.data <= 0):
        raise ValueError("density must stay positive")


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def _stress_piece(F, prm: NeoHookeanParams):
    J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    B = np.einsum("...ij,...kj->...ik", F, F)
    I = np.eye(2)
    return prm.mu * (B - I) + (prm.lam * (J - 1.0) * J)[..., None, None] * I


def cauchy_stress_blended(state: State, p: ThermoParams,
                          include_interfacial: bool = True) -> np.ndarray:
    """Nodal Cauchy stress of the solid/melt blend (plus the interfacial term)."""
    Fe = state.Fe.data
    h = smooth_heaviside(state.phi.phi.data, p.l)
    sig = (1.0 - h)[:, None, None] * _stress_piece(p.stretch_scale * Fe, p.solid)
    sig += h[:, None, None] * _stress_piece(Fe, p.melt)
    sig *= state.rho.data[:, None, None]
    if include_interfacial:
        g = _nodal_phase_gradient(state)
        sig -= 2.0 * p.kappa1 * state.rho.data[:, None, None] * np.einsum(
            "ni,nj->nij", g, g)
    return sig


def total_free_energy(state: State, T: TemperatureField, p: ThermoParams) -> float:
    """Integral of rho (f_thermal + f_elastic + f_interfacial) over the domain."""
    rule = triangle_rule(4)
    phi_q = values_at_qp(state.phi.phi, rule)
    rho_q = values_at_qp(state.rho, rule)
    Fe_q = values_at_qp(state.Fe, rule)
    g_q = grads_at_qp(state.phi.phi, rule)
    theta_q = values_at_qp(T.undercooling, rule)
    T_q = p.T_m0 * (1.0 - theta_q / p.L)
    h = smooth_heaviside(phi_q, p.l)
    fth = p.c_p * T_q * np.log(p.T_m0 / T_q) + h * theta_q
    Wm = neo_hookean_energy_batch(Fe_q, p.melt.mu, p.melt.lam)
    Ws = neo_hookean_energy_batch(p.stretch_scale * Fe_q, p.solid.mu, p.solid.lam)
    fel = (1.0 - h) * Ws + h * Wm
    fin = f_interfacial(g_q, phi_q, p)
    _, wq = qp_geometry(state.mesh, rule)
    return float(np.sum(wq * rho_q * (fth + fel + fin)))
