"""The evolving unknowns at one time level."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fields import Field
from .phase import PhaseField, smooth_heaviside

__all__ = ["State"]


@dataclass
class State:
    """Snapshot of (phi, rho, Fe, last displacement) on one shared mesh."""

    phi: PhaseField
    rho: Field
    Fe: Field
    u_last: Field
    t: float = 0.0

    def __post_init__(self):
        mesh = self.phi.mesh
        for f in (self.rho, self.Fe, self.u_last):
            if f.mesh is not mesh:
                raise ValueError("all state fields must share one mesh")
        if self.rho.rank != "scalar" or self.Fe.rank != "tensor" or self.u_last.rank != "vector":
            raise ValueError("state field ranks must be (scalar rho, tensor Fe, vector u)")

    @property
    def mesh(self):
        return self.phi.mesh

    def copy(self) -> "State":
        return State(self.phi.copy(), self.rho.copy(), self.Fe.copy(), self.u_last.copy(), self.t)

    def replace(self, **kw) -> "State":
        return replace(self, **kw)

    def check_admissible(self, l: float, body_threshold: float = 0.05) -> None:
        """det Fe > 0 wherever the body fraction exceeds the threshold; rho > 0."""
        det = np.linalg.det(self.Fe.data)
        h = smooth_heaviside(self.phi.phi.data, l)
        if self.Fe.degree == 1 and len(h) != len(det):
            h = h[: len(det)]
        bad = (h > body_threshold) & (det <= 0)
        if np.any(bad):
            raise ValueError(f"det Fe <= 0 at {int(bad.sum())} in-body sites")
        if np.any(self.rho.data <= 0):
            raise ValueError("density must stay positive")
