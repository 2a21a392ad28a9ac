"""Damped Newton iteration and sparse linear solves."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "NewtonConfig",
    "LinearSolverConfig",
    "LinearSolveError",
    "NewtonStats",
    "linear_solve",
    "newton_solve",
]

log = logging.getLogger(__name__)


@dataclass
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_iters: int = 25
    backtrack: float = 0.5
    sufficient_decrease: float = 1e-4
    max_halvings: int = 10

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class LinearSolverConfig:
    """``method`` is ``"direct"`` (sparse LU) or ``"krylov"`` (restarted GMRES).

    ``max_krylov_iters`` bounds the total number of inner GMRES iterations.
    """

    method: str = "direct"
    rel_residual_tol: float = 1e-10
    max_krylov_iters: int = 2000
    restart: int = 100
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if self.method not in ("direct", "krylov"):
            raise ValueError(f"unknown linear method {self.method!r}")
        if self.preconditioner not in ("none", "jacobi", "block_diagonal"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not self.rel_residual_tol > 0:
            raise ValueError("rel_residual_tol must be positive")


class LinearSolveError(RuntimeError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


def _preconditioner(A, cfg, blocks):
    n = A.shape[0]
    if cfg.preconditioner == "none":
        return None
    if cfg.preconditioner == "jacobi":
        diag = A.diagonal()
        if np.any(diag == 0):
            raise LinearSolveError("zero diagonal entry, Jacobi preconditioner undefined")
        inv = 1.0 / diag
        return spla.LinearOperator((n, n), matvec=lambda v: inv * v)
    if blocks is None:
        blocks = (n,)
    bounds = np.concatenate([[0], np.cumsum(blocks)])
    if bounds[-1] != n:
        raise ValueError(f"block sizes {blocks} do not add up to {n}")
    lus = [spla.splu(sp.csc_matrix(A[a:b, a:b])) for a, b in zip(bounds[:-1], bounds[1:])]

    def apply(v):
        out = np.empty_like(v)
        for lu, a, b in zip(lus, bounds[:-1], bounds[1:]):
            out[a:b] = lu.solve(v[a:b])
        return out

    return spla.LinearOperator((n, n), matvec=apply)


def linear_solve(A, b, cfg: LinearSolverConfig | None = None, blocks=None) -> np.ndarray:
    """Solve ``A x = b`` and certify ``||Ax - b|| <= tol ||b||``.

    ``blocks`` lists the diagonal block sizes used by the block-diagonal
    preconditioner.
    """
    cfg = cfg or LinearSolverConfig()
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {b.shape}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b)
    target = cfg.rel_residual_tol * bnorm
    iterations = None
    if cfg.method == "direct":
        try:
            lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise LinearSolveError(f"sparse LU failed: {exc}") from exc
        x = lu.solve(b)
        r = b - A @ x
        # one round of iterative refinement recovers digits lost to pivoting
        if np.linalg.norm(r) > target:
            x = x + lu.solve(r)
    else:
        M = _preconditioner(A, cfg, blocks)
        counter = {"n": 0}

        def count(_):
            counter["n"] += 1

        # GMRES stops on the preconditioned residual, so tighten and re-check below
        x, info = spla.gmres(A, b, rtol=cfg.rel_residual_tol * 0.1, atol=0.0,
                             restart=cfg.restart, M=M,
                             maxiter=max(1, math.ceil(cfg.max_krylov_iters / cfg.restart)),
                             callback=count, callback_type="pr_norm")
        iterations = counter["n"]
        if info < 0:
            raise LinearSolveError("GMRES breakdown", iterations)
    res = float(np.linalg.norm(b - A @ x))
    if not np.all(np.isfinite(x)) or not res <= target:
        raise LinearSolveError(
            f"{cfg.method} solve missed the residual bound: {res:.3e} > {target:.3e}",
            iterations, res)
    return x


@dataclass
class NewtonStats:
    converged: bool = False
    iterations: int = 0
    residual_norms: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    message: str = ""

    @property
    def final_residual(self) -> float:
        return self.residual_norms[-1] if self.residual_norms else math.nan

    def records(self):
        """Per-iteration ``(iteration, residual, step_length)`` rows."""
        steps = [math.nan] + list(self.step_lengths)
        return [(k, r, steps[k]) for k, r in enumerate(self.residual_norms)]

    def quadratic_ratios(self):
        r = self.residual_norms
        return [r[k + 1] / r[k] ** 2 for k in range(len(r) - 1) if r[k] > 0]


def newton_solve(residual, jacobian, x0, ncfg: NewtonConfig | None = None,
                 lcfg: LinearSolverConfig | None = None, blocks=None):
    """Damped Newton iteration for ``residual(x) = 0``.

    Each step solves ``J dx = -R`` and halves the step until
    ``||R(x + a dx)|| <= (1 - 1e-4 a) ||R(x)||``.  Failure to converge is
    reported through ``stats.converged``; the best iterate is returned.
    """
    ncfg = ncfg or NewtonConfig()
    lcfg = lcfg or LinearSolverConfig()
    x = np.array(x0, dtype=float)
    r = residual(x)
    rnorm = float(np.linalg.norm(r))
    stats = NewtonStats(residual_norms=[rnorm])
    if not np.isfinite(rnorm):
        stats.message = "initial residual is not finite"
        return x, stats
    stop = max(ncfg.abs_tol, ncfg.rel_tol * rnorm)
    for it in range(ncfg.max_iters):
        if rnorm <= stop:
            stats.converged = True
            stats.message = "converged"
            return x, stats
        try:
            dx = linear_solve(jacobian(x), -r, lcfg, blocks=blocks)
        except LinearSolveError as exc:
            stats.message = f"linear solve failed at iteration {it}: {exc}"
            return x, stats
        alpha = 1.0
        for _ in range(ncfg.max_halvings + 1):
            x_new = x + alpha * dx
            r_new = residual(x_new)
            rnorm_new = float(np.linalg.norm(r_new))
            if np.isfinite(rnorm_new) and rnorm_new <= (1 - ncfg.sufficient_decrease * alpha) * rnorm:
                break
            alpha *= ncfg.backtrack
        else:
            stats.message = f"line search failed at iteration {it}"
            return x, stats
        x, r, rnorm = x_new, r_new, rnorm_new
        stats.iterations += 1
        stats.residual_norms.append(rnorm)
        stats.step_lengths.append(alpha)
        log.debug("newton %d: |R| = %.3e, step %.3g", stats.iterations, rnorm, alpha)
    if rnorm <= stop:
        stats.converged = True
        stats.message = "converged"
    else:
        stats.message = f"no convergence in {ncfg.max_iters} iterations"
    return x, stats
