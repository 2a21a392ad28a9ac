"""Space-time finite element solver for optimal control of Carreau-type flow.

The state equation ``d_t y - div(nu(|grad y|) grad y) = f + u`` is
discretized with continuous piecewise linear elements on simplicial
space-time meshes, and the first-order optimality system for a tracking
functional is solved all at once by Newton's method.
"""

__version__ = "0.1.0"

from .fem import DofMask, NodalField, evaluate, interpolate, l2_error, l2_norm_Q, mass_matrix
from .kkt import (
    KKTSolution,
    OptControlProblem,
    assemble_kkt_jacobian,
    assemble_kkt_residual,
    cost_functional,
    recover_control,
    reduced_cost,
    reduced_gradient,
    solve_adjoint,
    solve_forward,
    solve_kkt,
)
from .mesh import DomainSpec, SimplexMesh, build_tensor_simplex_mesh, locate_point, validate_mesh
from .model import CarreauParams, flux, flux_jacobian, viscosity
from .solver import LinearSolverConfig, NewtonConfig, linear_solve, newton_solve
from .verify import ConvergenceTable, fd_gradient_check, mms_forward, mms_linear_kkt

__all__ = [
    "__version__",
    "CarreauParams",
    "ConvergenceTable",
    "DofMask",
    "DomainSpec",
    "KKTSolution",
    "LinearSolverConfig",
    "NewtonConfig",
    "NodalField",
    "OptControlProblem",
    "SimplexMesh",
    "assemble_kkt_jacobian",
    "assemble_kkt_residual",
    "build_tensor_simplex_mesh",
    "cost_functional",
    "evaluate",
    "fd_gradient_check",
    "flux",
    "flux_jacobian",
    "interpolate",
    "l2_error",
    "l2_norm_Q",
    "linear_solve",
    "locate_point",
    "mass_matrix",
    "mms_forward",
    "mms_linear_kkt",
    "newton_solve",
    "recover_control",
    "reduced_cost",
    "reduced_gradient",
    "solve_adjoint",
    "solve_forward",
    "solve_kkt",
    "validate_mesh",
    "viscosity",
]
