"""All-at-once optimality system for tracking-type optimal control of the Carreau state equation.

Sign convention: the Lagrangian is ``L = J - A(y, u)(p)``, so the control
is ``u = -p / rho`` and the adjoint equation has right-hand side ``y - y_d``.
The control is never a separate unknown; the Newton unknowns are the free
state dofs followed by the free adjoint dofs.

Discrete spaces: the state vanishes on the lateral boundary and at t = 0.
In the optimality system the adjoint, which is also the test space of the
state equation, vanishes on the lateral boundary only; ``p(T) = 0`` then
holds as a natural condition.  The coupled system is square overall (one
more time level of adjoint unknowns than state unknowns, balanced by one
more state-equation row).  A stand-alone forward solve needs a square
state operator, so :func:`solve_forward` tests the state equation with the
state space itself, and :func:`solve_adjoint` uses its exact transpose.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import presets
from .fem import DofMask, NodalField, assemble_bilinear, interpolate, mass_matrix, values_of
from .mesh import DomainSpec, SimplexMesh, build_tensor_simplex_mesh
from .model import (
    CarreauParams,
    assemble_state_jacobian,
    assemble_state_residual,
    element_gradients,
    flux_hessian_contract,
    state_jacobian_kernel,
    state_operator_local,
)
from .solver import LinearSolverConfig, NewtonConfig, NewtonStats, linear_solve, newton_solve

__all__ = [
    "OptControlProblem",
    "KKTSolution",
    "cost_functional",
    "recover_control",
    "assemble_kkt_residual",
    "assemble_kkt_jacobian",
    "solve_kkt",
    "solve_forward",
    "solve_adjoint",
    "reduced_cost",
    "reduced_gradient",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OptControlProblem:
    """Problem instance; the initial state is identically zero."""

    domain: DomainSpec
    divisions: tuple
    params: CarreauParams = field(default_factory=CarreauParams)
    rho: float = 1e-2
    f: object = presets.zero
    y_d: object = presets.zero
    workers: int = 1

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        object.__setattr__(self, "divisions", tuple(int(m) for m in self.divisions))

    @cached_property
    def mesh(self) -> SimplexMesh:
        return build_tensor_simplex_mesh(self.domain, self.divisions)

    @cached_property
    def f_field(self) -> NodalField:
        return interpolate(self.mesh, self.f)

    @cached_property
    def yd_field(self) -> NodalField:
        return interpolate(self.mesh, self.y_d)

    @cached_property
    def state_mask(self) -> DofMask:
        return DofMask.state(self.mesh)

    @cached_property
    def multiplier_mask(self) -> DofMask:
        """Adjoint unknowns of the optimality system: zero on the lateral boundary."""
        return DofMask.lateral(self.mesh)

    @property
    def y0(self) -> float:
        return 0.0

    def with_rho(self, rho) -> "OptControlProblem":
        """Same mesh and data with another regularization parameter."""
        new = OptControlProblem(self.domain, self.divisions, self.params, rho,
                                self.f, self.y_d, self.workers)
        for name in ("mesh", "f_field", "yd_field", "state_mask", "multiplier_mask"):
            if name in self.__dict__:
                new.__dict__[name] = self.__dict__[name]
        return new


@dataclass
class KKTSolution:
    y: NodalField
    p: NodalField
    u: NodalField
    converged: bool
    newton_iters: int
    final_residual: float
    stats: NewtonStats | None = None


def cost_functional(problem: OptControlProblem, y, u):
    """``(J, tracking, energy)`` with ``J = 1/2 |y_d - y|^2 + rho/2 |u|^2`` in ``L2(Q)``."""
    M = mass_matrix(problem.mesh)
    e = values_of(y) - problem.yd_field.values
    uv = values_of(u)
    tracking = 0.5 * float(e @ (M @ e))
    energy = 0.5 * problem.rho * float(uv @ (M @ uv))
    return tracking + energy, tracking, energy


def recover_control(p, rho) -> NodalField | np.ndarray:
    """Stationarity in the control: ``u = -p / rho`` nodewise."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if isinstance(p, NodalField):
        return NodalField(p.mesh, -p.values / rho)
    return -np.asarray(p, dtype=float) / rho


def _split(problem, x):
    ny = problem.state_mask.n_free
    return problem.state_mask.extend(x[:ny]), problem.multiplier_mask.extend(x[ny:])


def _stack(problem, y, p):
    return np.concatenate([problem.state_mask.restrict(y), problem.multiplier_mask.restrict(p)])


def assemble_kkt_residual(problem: OptControlProblem, y, p) -> np.ndarray:
    """Stacked ``[R_y; R_p]`` with the control eliminated.

    ``R_p(q) = (d_t y, q) + (F(grad_x y), grad_x q) + (p, q)/rho - (f, q)``
    over free multiplier dofs, and
    ``R_y(v) = (y - y_d, v) - (d_t v, p) - (DF(grad_x y) grad_x v, grad_x p)``
    over free state dofs.
    """
    mesh = problem.mesh
    yv, pv = values_of(y), values_of(p)
    M = mass_matrix(mesh)
    r_p = assemble_state_residual(mesh, problem.params, yv, -pv / problem.rho,
                                  problem.f_field.values, test_mask=problem.multiplier_mask)
    B = assemble_state_jacobian(mesh, problem.params, yv, DofMask.full(mesh),
                                DofMask.full(mesh), workers=problem.workers)
    r_y_full = M @ (yv - problem.yd_field.values) - B.T @ pv
    r_y = r_y_full[problem.state_mask.free_indices]
    res = np.concatenate([r_y, r_p])
    if not np.all(np.isfinite(res)):
        raise FloatingPointError("non-finite KKT residual")
    return res


def _hessian_kernel(params, grad_y, grad_p):
    def kernel(geo, elems):
        a = geo.grad_lambda[elems][:, :, :-1]
        T = flux_hessian_contract(params, grad_y[elems, :-1], grad_p[elems, :-1])
        return geo.volumes[elems, None, None] * np.einsum("ejd,edf,ekf->ejk", a, T, a)
    return kernel


def assemble_kkt_jacobian(problem: OptControlProblem, y, p, mode: str = "full") -> sp.csr_matrix:
    """Jacobian of :func:`assemble_kkt_residual` in block form ``[[M - H, -B^T], [B, M/rho]]``.

    ``H`` carries the second flux derivative; ``mode="gauss_newton"`` drops it.
    """
    if mode not in ("full", "gauss_newton"):
        raise ValueError(f"mode must be 'full' or 'gauss_newton', got {mode!r}")
    mesh, params = problem.mesh, problem.params
    sm, am = problem.state_mask, problem.multiplier_mask
    yv, pv = values_of(y), values_of(p)
    M = mass_matrix(mesh)
    B = assemble_state_jacobian(mesh, params, yv, sm, am, workers=problem.workers)
    Myy = M[sm.free_indices][:, sm.free_indices]
    Mpp = M[am.free_indices][:, am.free_indices]
    top_left = Myy
    if mode == "full" and not params.is_linear:
        H = assemble_bilinear(mesh, _hessian_kernel(params, element_gradients(mesh, yv),
                                                    element_gradients(mesh, pv)),
                              sm, sm, workers=problem.workers)
        top_left = Myy - H
    K = sp.bmat([[top_left, -B.T], [B, Mpp / problem.rho]], format="csr")
    K.sort_indices()
    return K


def _solution(problem, y, p, stats):
    mesh = problem.mesh
    return KKTSolution(
        y=NodalField(mesh, y),
        p=NodalField(mesh, p),
        u=NodalField(mesh, recover_control(p, problem.rho)),
        converged=stats.converged,
        newton_iters=stats.iterations,
        final_residual=stats.final_residual,
        stats=stats,
    )


def solve_kkt(problem: OptControlProblem, newton_cfg: NewtonConfig | None = None,
              linear_cfg: LinearSolverConfig | None = None,
              initial: KKTSolution | None = None, mode: str = "full") -> KKTSolution:
    """Newton's method on the coupled state/adjoint system, starting from zero or ``initial``."""
    if initial is None:
        x0 = np.zeros(problem.state_mask.n_free + problem.multiplier_mask.n_free)
    else:
        x0 = _stack(problem, initial.y, initial.p)

    def residual(x):
        return assemble_kkt_residual(problem, *_split(problem, x))

    def jacobian(x):
        return assemble_kkt_jacobian(problem, *_split(problem, x), mode=mode)

    blocks = (problem.state_mask.n_free, problem.multiplier_mask.n_free)
    x, stats = newton_solve(residual, jacobian, x0, newton_cfg, linear_cfg, blocks=blocks)
    y, p = _split(problem, x)
    return _solution(problem, y, p, stats)


def solve_forward(problem: OptControlProblem, u, newton_cfg: NewtonConfig | None = None,
                  linear_cfg: LinearSolverConfig | None = None, return_stats: bool = False):
    """State for a fixed control by Newton's method on the state equation.

    Trial and test functions both vanish on the lateral boundary and at t = 0.
    """
    mesh = problem.mesh
    sm = problem.state_mask
    uv, fv = values_of(u), problem.f_field.values

    def residual(x):
        return assemble_state_residual(mesh, problem.params, sm.extend(x), uv, fv, test_mask=sm)

    def jacobian(x):
        return assemble_state_jacobian(mesh, problem.params, sm.extend(x), sm, sm,
                                       workers=problem.workers)

    x, stats = newton_solve(residual, jacobian, np.zeros(sm.n_free), newton_cfg, linear_cfg)
    if not stats.converged:
        log.warning("forward solve did not converge: %s", stats.message)
    y = NodalField(mesh, sm.extend(x))
    return (y, stats) if return_stats else y


def adjoint_matrix(problem: OptControlProblem, y) -> sp.csr_matrix:
    """Transpose of the square state Jacobian used by :func:`solve_forward`."""
    sm = problem.state_mask
    B = assemble_state_jacobian(problem.mesh, problem.params, values_of(y), sm, sm,
                                workers=problem.workers)
    return sp.csr_matrix(B.T)


def solve_adjoint(problem: OptControlProblem, y, linear_cfg: LinearSolverConfig | None = None,
                  scheme: str = "discrete") -> NodalField:
    """Adjoint state for a given ``y``.

    ``scheme="discrete"`` solves
    ``-(d_t v, p) - (DF grad_x v, grad_x p) = (y_d - y, v)`` for all state-space
    ``v`` with ``p`` in the state space, i.e. the exact transpose of the
    forward operator; :func:`reduced_gradient` is then the exact gradient of
    the discrete reduced cost.  This transpose pins ``p`` to zero at t = 0
    rather than t = T, so it is a gradient device only and does not converge
    to the continuous adjoint.  ``scheme="backward"`` discretizes
    ``-d_t p - div(DF grad_x p) = y - y_d, p(T) = 0`` directly with trial and
    test functions vanishing at t = T; it converges to the continuous adjoint
    at second order but is not a discrete transpose.
    """
    mesh = problem.mesh
    rhs = mass_matrix(mesh) @ (values_of(y) - problem.yd_field.values)
    if scheme == "backward":
        am = DofMask.adjoint(mesh)
        grad = element_gradients(mesh, y)
        A = assemble_bilinear(mesh, _backward_kernel(problem.params, grad), am, am,
                              workers=problem.workers)
        x = linear_solve(A, rhs[am.free_indices], linear_cfg)
        return NodalField(mesh, am.extend(x))
    if scheme != "discrete":
        raise ValueError(f"scheme must be 'discrete' or 'backward', got {scheme!r}")
    sm = problem.state_mask
    x = linear_solve(adjoint_matrix(problem, y), rhs[sm.free_indices], linear_cfg)
    return NodalField(mesh, sm.extend(x))


def _backward_kernel(params, grad):
    forward = state_jacobian_kernel(params, grad)

    def kernel(geo, elems):
        D = geo.grad_lambda.shape[2]
        gl = geo.grad_lambda[elems]
        local = forward(geo, elems)
        time = np.broadcast_to(gl[:, None, :, -1], local.shape) / (D + 1)
        # flip (d_t p, v) to (-d_t p, v)
        return local - 2 * geo.volumes[elems, None, None] * time

    return kernel


def reduced_cost(problem: OptControlProblem, u, newton_cfg=None, linear_cfg=None) -> float:
    """``j(u) = J(y(u), u)``."""
    y = solve_forward(problem, u, newton_cfg, linear_cfg)
    return cost_functional(problem, y, u)[0]


def reduced_gradient(problem: OptControlProblem, u, newton_cfg=None,
                     linear_cfg=None) -> NodalField:
    """``L2(Q)`` Riesz representative ``rho u + p`` of the reduced gradient."""
    y = solve_forward(problem, u, newton_cfg, linear_cfg)
    p = solve_adjoint(problem, y, linear_cfg)
    return NodalField(problem.mesh, problem.rho * values_of(u) + p.values)


def kkt_lagrangian(problem: OptControlProblem, y, u, p) -> float:
    """``L(y, u, p) = J(y, u) - A(y, u)(p)``."""
    mesh = problem.mesh
    local = state_operator_local(mesh, problem.params, y)
    Ap = float(np.sum(local * values_of(p)[mesh.elements]))
    Ap -= float(values_of(p) @ (mass_matrix(mesh) @ (problem.f_field.values + values_of(u))))
    return cost_functional(problem, y, u)[0] - Ap
