"""Phase function machinery: smoothed sign blend, normals, variational filter.

The body shape is carried implicitly by a scalar field phi (about +1 inside,
-1 outside); its zero level set is the boundary. The variational filter keeps
the transition band at a controlled width and suppresses transport-induced
oscillations without re-initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import assembly
from .fields import Field, grad_field, grads_at_qp, values_at_qp
from .mesh import triangle_rule
from .solvers import newton_minimize

__all__ = [
    "PhaseParams",
    "PhaseField",
    "smooth_heaviside",
    "smooth_heaviside_deriv",
    "interface_normal",
    "regularize",
    "reg_functional_value",
    "DegenerateGradient",
]


class DegenerateGradient(ValueError):
    """The phase gradient is too small to define an interface normal."""


@dataclass(frozen=True)
class PhaseParams:
    """Filter and blending constants.

    epsilon   : interface thickness (length)
    sigma_phi : fidelity weight of the filter (1/length)
    l         : sharpness of the smoothed sign blend H_l
    """

    epsilon: float
    sigma_phi: float
    l: float = 2.0

    def __post_init__(self):
        if self.epsilon <= 0 or self.sigma_phi <= 0 or self.l <= 0:
            raise ValueError("epsilon, sigma_phi and l must all be positive")

    @property
    def g_min(self) -> float:
        """Smallest |grad phi| at which a normal is considered meaningful."""
        return 1e-3 / self.epsilon


@dataclass
class PhaseField:
    """Scalar phase function wrapper; phi is a degree-1 nodal field."""

    phi: Field

    def __post_init__(self):
        if self.phi.rank != "scalar":
            raise ValueError("phase function must be a scalar field")

    @property
    def mesh(self):
        return self.phi.mesh

    def copy(self) -> "PhaseField":
        return PhaseField(self.phi.copy())


def smooth_heaviside(phi_value, l: float):
    """Smooth 0..1 blend (1 + tanh(l*phi)) / 2."""
    return 0.5 * (1.0 + np.tanh(l * np.asarray(phi_value, float)))


def smooth_heaviside_deriv(phi_value, l: float):
    """Derivative of smooth_heaviside: l / (2 cosh^2(l*phi))."""
    c = np.cosh(l * np.asarray(phi_value, float))
    return 0.5 * l / (c * c)


def interface_normal(phase: PhaseField, x, params: PhaseParams) -> np.ndarray:
    """Outward unit normal of the body, -grad(phi)/|grad(phi)|, at point x."""
    g = grad_field(phase.phi, np.asarray(x, float))
    norm = float(np.linalg.norm(g))
    if norm <= params.g_min:
        raise DegenerateGradient(
            f"|grad phi| = {norm:.3e} <= {params.g_min:.3e}: far-field point has no normal"
        )
    return -g / norm


# ---------------------------------------------------------------------------
# Variational filter
# ---------------------------------------------------------------------------

class _RegFunctional:
    """Discrete filter energy for a fixed input phase field."""

    def __init__(self, phi_in: Field, params: PhaseParams):
        self.mesh = phi_in.mesh
        self.degree = phi_in.degree
        self.params = params
        self.rule = triangle_rule(4)
        self.phi_in_qp = values_at_qp(phi_in, self.rule)
        self.mass = assembly.scalar_mass_matrix(self.mesh, self.degree, self.rule)
        self.stiff = assembly.scalar_stiffness_matrix(self.mesh, self.degree, self.rule)
        N, _ = assembly._shape_data(self.mesh, self.degree, self.rule)
        self._N = N
        self._w = assembly._qp_weights(self.mesh, self.rule)
        self._dofs = assembly.element_dofs(self.mesh, self.degree)

    def _qp(self, x):
        return np.einsum("qa,ta->tq", self._N, x[self._dofs])

    def value(self, x):
        p = self.params
        pq = self._qp(x)
        dens = (
            p.sigma_phi * (pq - self.phi_in_qp) ** 2
            + (1.0 / (2.0 * p.epsilon)) * (pq * pq - 1.0) ** 2
        )
        val = float(np.sum(self._w * dens))
        val += 0.5 * p.epsilon * float(x @ (self.stiff @ x))
        return val

    def gradient(self, x):
        p = self.params
        pq = self._qp(x)
        src = 2.0 * p.sigma_phi * (pq - self.phi_in_qp) + (2.0 / p.epsilon) * pq * (pq * pq - 1.0)
        g = assembly.scalar_load_vector(self.mesh, src, self.degree, self.rule)
        g += p.epsilon * (self.stiff @ x)
        return g

    def hessian(self, x):
        p = self.params
        pq = self._qp(x)
        coeff = 2.0 * p.sigma_phi + (2.0 / p.epsilon) * (3.0 * pq * pq - 1.0)
        return assembly.scalar_mass_matrix(self.mesh, self.degree, self.rule, coeff) \
            + p.epsilon * self.stiff


def reg_functional_value(phi_bar: Field, phi_in: Field, params: PhaseParams) -> float:
    """Filter energy Reg[phi_bar] relative to the input phi_in."""
    fn = _RegFunctional(phi_in, params)
    return fn.value(phi_bar.data)


def regularize(phi_in: PhaseField, params: PhaseParams, tol: float = 1e-8,
               max_iter: int = 50) -> PhaseField:
    """Apply the variational filter, returning the minimizer of the filter energy.

    Natural (zero-flux) boundary conditions; Newton starts from the input
    field, which is close to the minimizer by construction.
    """
    if not np.all(np.isfinite(phi_in.phi.data)):
        raise ValueError("phase field must be finite before filtering")
    fn = _RegFunctional(phi_in.phi, params)
    x, _ = newton_minimize(fn, phi_in.phi.data, tol=tol, max_iter=max_iter)
    return PhaseField(phi_in.phi.with_data(x))


def body_fraction_at_qp(phase: PhaseField, l: float, rule=None) -> np.ndarray:
    """H_l(phi) at quadrature points; the solid/exterior blending weight."""
    rule = rule or triangle_rule(4)
    return smooth_heaviside(values_at_qp(phase.phi, rule), l)


def heaviside_gradient_magnitude_at_qp(phase: PhaseField, l: float, rule=None) -> np.ndarray:
    """|grad H_l(phi)| at quadrature points; the diffuse surface density."""
    rule = rule or triangle_rule(4)
    gq = grads_at_qp(phase.phi, rule)
    pq = values_at_qp(phase.phi, rule)
    return smooth_heaviside_deriv(pq, l) * np.linalg.norm(gq, axis=-1)
