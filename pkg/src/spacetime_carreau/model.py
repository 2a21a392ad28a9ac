"""Simplified Carreau law ``nu(g) = (1 + c|g|^2)^((n-1)/2)`` and the state operator.

All pointwise functions broadcast over leading axes of the gradient ``g``
(shape ``(..., d)``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import DofMask, NodalField, assemble_bilinear, assemble_linear, mass_matrix, values_of
from .mesh import SimplexMesh

__all__ = [
    "CarreauParams",
    "viscosity",
    "flux",
    "flux_jacobian",
    "flux_hessian_apply",
    "flux_hessian_contract",
    "flux_potential",
    "element_gradients",
    "assemble_state_residual",
    "assemble_state_jacobian",
]


@dataclass(frozen=True)
class CarreauParams:
    """Power exponent ``n > 0`` and shear coefficient ``c >= 0``."""

    n: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError(f"n must be positive, got {self.n}")
        if not self.c >= 0:
            raise ValueError(f"c must be non-negative, got {self.c}")

    @property
    def is_linear(self) -> bool:
        return self.n == 1 or self.c == 0


def _w(params, g):
    return 1.0 + params.c * np.sum(g * g, axis=-1)


def viscosity(params: CarreauParams, g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if params.is_linear:
        return np.ones(g.shape[:-1])
    return _w(params, g) ** ((params.n - 1) / 2)


def flux(params: CarreauParams, g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    return viscosity(params, g)[..., None] * g


def flux_jacobian(params: CarreauParams, g) -> np.ndarray:
    """``DF(g) = nu(g) I + c(n-1) w^((n-3)/2) g g^T`` with ``w = 1 + c|g|^2``."""
    g = np.asarray(g, dtype=float)
    d = g.shape[-1]
    eye = np.broadcast_to(np.eye(d), g.shape[:-1] + (d, d))
    if params.is_linear:
        return eye.copy()
    n, c = params.n, params.c
    w = _w(params, g)
    out = (w ** ((n - 1) / 2))[..., None, None] * eye
    out = out + (c * (n - 1) * w ** ((n - 3) / 2))[..., None, None] * (g[..., :, None] * g[..., None, :])
    return out


def _hessian_coefficients(params, g):
    n, c = params.n, params.c
    w = _w(params, g)
    alpha = c * (n - 1) * w ** ((n - 3) / 2)
    beta = c * c * (n - 1) * (n - 3) * w ** ((n - 5) / 2)
    return alpha, beta


def flux_hessian_apply(params: CarreauParams, g, h, k) -> np.ndarray:
    """Second derivative ``D^2F(g)[h, k]``, a d-vector symmetric in ``h`` and ``k``."""
    g, h, k = (np.asarray(a, dtype=float) for a in (g, h, k))
    if params.is_linear:
        return np.zeros(np.broadcast_shapes(g.shape, h.shape, k.shape))
    alpha, beta = _hessian_coefficients(params, g)
    gk = np.sum(g * k, axis=-1)[..., None]
    gh = np.sum(g * h, axis=-1)[..., None]
    hk = np.sum(h * k, axis=-1)[..., None]
    return alpha[..., None] * (gk * h + gh * k + hk * g) + beta[..., None] * gh * gk * g


def flux_hessian_contract(params: CarreauParams, g, q) -> np.ndarray:
    """Matrix ``T`` with ``h^T T k = D^2F(g)[h, k] . q``."""
    g, q = np.asarray(g, dtype=float), np.asarray(q, dtype=float)
    d = g.shape[-1]
    shape = np.broadcast_shapes(g.shape, q.shape)[:-1] + (d, d)
    if params.is_linear:
        return np.zeros(shape)
    alpha, beta = _hessian_coefficients(params, g)
    gq = np.sum(g * q, axis=-1)
    outer = q[..., :, None] * g[..., None, :] + g[..., :, None] * q[..., None, :]
    T = alpha[..., None, None] * (outer + gq[..., None, None] * np.eye(d))
    T = T + (beta * gq)[..., None, None] * (g[..., :, None] * g[..., None, :])
    return T


def flux_potential(params: CarreauParams, g) -> np.ndarray:
    """Scalar potential whose gradient is :func:`flux`."""
    g = np.asarray(g, dtype=float)
    s = np.sum(g * g, axis=-1)
    n, c = params.n, params.c
    if c == 0:
        return 0.5 * s
    # (w^((n+1)/2) - 1) / (c (n+1)) without cancellation for small c|g|^2
    return np.expm1((n + 1) / 2 * np.log1p(c * s)) / (c * (n + 1))


def element_gradients(mesh: SimplexMesh, values) -> np.ndarray:
    """Constant space-time gradient of a P1 field on every element, ``(E, D)``."""
    v = values_of(values)[mesh.elements]
    return np.einsum("ek,ekd->ed", v, mesh.geometry.grad_lambda)


def _require_finite(arr, what):
    arr = np.asarray(arr)
    flat = arr.reshape(arr.shape[0], -1)
    bad = ~np.all(np.isfinite(flat), axis=1)
    if np.any(bad):
        raise FloatingPointError(f"non-finite {what} on element {int(np.argmax(bad))}")


def state_operator_local(mesh: SimplexMesh, params: CarreauParams, y) -> np.ndarray:
    """Local vectors of ``(d_t y, q) + (F(grad_x y), grad_x q)`` per element."""
    geo = mesh.geometry
    D = mesh.dim
    grad = element_gradients(mesh, y)
    F = flux(params, grad[:, :-1])
    _require_finite(F, "flux")
    time_part = (geo.volumes * grad[:, -1] / (D + 1))[:, None]
    diff_part = geo.volumes[:, None] * np.einsum("ekd,ed->ek", geo.grad_lambda[:, :, :-1], F)
    return time_part + diff_part


def assemble_state_residual(mesh: SimplexMesh, params: CarreauParams, y, u, f,
                            test_mask: DofMask | None = None) -> np.ndarray:
    """Vector of ``A(y, u)(phi_q)`` over the free adjoint-space basis functions.

    ``A(y, u)(q) = (d_t y, q) + (nu(grad_x y) grad_x y, grad_x q) - (f + u, q)``.
    """
    if test_mask is None:
        test_mask = DofMask.adjoint(mesh)
    local = state_operator_local(mesh, params, y)
    load = mass_matrix(mesh) @ (values_of(f) + values_of(u))
    res = assemble_linear(mesh, local) - load
    return res[test_mask.free_indices]


def state_jacobian_kernel(params: CarreauParams, grad: np.ndarray):
    """Kernel for ``(d_t dy, q) + (DF(grad_x y) grad_x dy, grad_x q)``."""

    def kernel(geo, elems):
        D = geo.grad_lambda.shape[2]
        gl = geo.grad_lambda[elems]
        vol = geo.volumes[elems]
        a = gl[:, :, :-1]
        if params.is_linear:
            diff = np.einsum("ejd,ekd->ejk", a, a)
        else:
            DF = flux_jacobian(params, grad[elems, :-1])
            diff = np.einsum("ejd,edf,ekf->ejk", a, DF, a)
        # test index j, trial index k: int d_t(phi_k) phi_j = vol/(D+1) * dt(lambda_k)
        time = np.broadcast_to(gl[:, None, :, -1], diff.shape) / (D + 1)
        return vol[:, None, None] * (diff + time)

    return kernel


def assemble_state_jacobian(mesh: SimplexMesh, params: CarreauParams, y,
                            trial_mask: DofMask | None = None,
                            test_mask: DofMask | None = None,
                            workers: int = 1) -> sp.csr_matrix:
    """Derivative of the state residual with respect to ``y``.

    Rows are adjoint test dofs, columns are state trial dofs.
    """
    if trial_mask is None:
        trial_mask = DofMask.state(mesh)
    if test_mask is None:
        test_mask = DofMask.adjoint(mesh)
    grad = element_gradients(mesh, y)
    return assemble_bilinear(mesh, state_jacobian_kernel(params, grad),
                             trial_mask, test_mask, workers=workers)


def as_field(mesh: SimplexMesh, values) -> NodalField:
    return values if isinstance(values, NodalField) else NodalField(mesh, values)
