"""Linear and Newton solvers backing every implicit update in the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["solve_sparse_spd", "newton_minimize", "NewtonInfo", "SolverError", "NewtonFailure"]


class SolverError(RuntimeError):
    """Linear-algebra failure (singular or indefinite system)."""


class NewtonFailure(SolverError):
    """Newton did not reach the requested residual; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def solve_sparse_spd(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for sparse symmetric positive-definite A."""
    A = sp.csc_matrix(A)
    asym = abs(A - A.T).max() if A.nnz else 0.0
    if asym > 1e-10 * max(abs(A).max(), 1.0):
        raise SolverError(f"matrix is not symmetric (|A - A^T|_max = {asym:.3e})")
    x = spla.spsolve(A, b)
    if not np.all(np.isfinite(x)):
        raise SolverError("sparse solve produced non-finite entries (singular system?)")
    return x


@dataclass
class NewtonInfo:
    """Convergence record of one newton_minimize call."""

    converged: bool = False
    iterations: int = 0
    residuals: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)


def newton_minimize(functional, x0: np.ndarray, tol: float = 1e-8, max_iter: int = 50,
                    backtrack: float = 0.5, armijo: float = 1e-4,
                    tol_scale: float | None = None):
    """Minimize a twice-differentiable functional by damped Newton.

    `functional` exposes value(x) -> float (may be +inf for infeasible
    states), gradient(x) -> vector, hessian(x) -> sparse matrix. The residual
    target is `tol` relative to max(1, initial gradient norm), or to
    `tol_scale` when given (warm starts pass the cold-start residual so the
    tolerance keeps its meaning); backtracking guarantees a monotone energy
    decrease. Returns (x, NewtonInfo).

    Raises NewtonFailure if the residual target is not met in max_iter steps
    and SolverError if a Newton system is singular or indefinite.
    """
    x = np.asarray(x0, float).copy()
    info = NewtonInfo()
    e = functional.value(x)
    if not np.isfinite(e):
        raise SolverError("initial state has non-finite energy")
    info.energies.append(float(e))
    g = functional.gradient(x)
    gnorm = float(np.linalg.norm(g))
    info.residuals.append(gnorm)
    scale = tol_scale if tol_scale is not None else max(1.0, gnorm)

    for _ in range(max_iter):
        if gnorm <= tol * scale:
            info.converged = True
            return x, info
        H = sp.csc_matrix(functional.hessian(x))
        try:
            lu = spla.splu(H, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
            d = lu.solve(-g)
        except Exception as exc:
            raise SolverError(f"Newton system solve failed: {exc}") from exc
        if not np.all(np.isfinite(d)):
            raise SolverError("singular Newton system (non-finite direction)")
        slope = float(g @ d)
        if slope >= 0.0:
            raise SolverError(
                f"indefinite Hessian: Newton direction is not a descent direction "
                f"(g.d = {slope:.3e})"
            )
        alpha = 1.0
        while True:
            e_new = functional.value(x + alpha * d)
            if np.isfinite(e_new) and e_new <= e + armijo * alpha * slope:
                break
            alpha *= backtrack
            if alpha < 1e-14:
                raise NewtonFailure("line search stalled", gnorm)
        x = x + alpha * d
        e = e_new
        g = functional.gradient(x)
        gnorm = float(np.linalg.norm(g))
        info.iterations += 1
        info.energies.append(float(e))
        info.residuals.append(gnorm)

    if gnorm <= tol * scale:
        info.converged = True
        return x, info
    raise NewtonFailure(f"no convergence in {max_iter} iterations", gnorm)
