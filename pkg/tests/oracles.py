"""Finite-difference oracles shared by the unit and acceptance tests."""
import numpy as np

from spacetime_carreau.model import CarreauParams, flux, flux_hessian_apply, flux_jacobian


def random_flux_case(rng):
    d = int(rng.integers(1, 4))
    params = CarreauParams(float(rng.uniform(0.5, 4.0)), float(rng.uniform(0.0, 10.0)))
    g = rng.uniform(-5, 5, size=d)
    return params, g


def flux_jacobian_fd_error(params, g, eps=1e-6):
    d = len(g)
    fd = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = eps * max(1.0, abs(g[j]))
        fd[:, j] = (flux(params, g + e) - flux(params, g - e)) / (2 * e[j])
    J = flux_jacobian(params, g)
    return np.max(np.abs(J - fd)) / max(np.max(np.abs(J)), 1e-300)


def flux_hessian_fd_error(params, g, h, k, eps=1e-6):
    """Relative error of ``D2F(g)[h, k]`` against differences of ``DF`` along ``k``.

    ``h`` and ``k`` are normalized (the form is bilinear).  Errors are taken
    relative to the largest of the two results and the scale
    ``|DF(g)| / max(1, |g|)`` of a second derivative, so that directions in
    which the exact value cancels to nearly zero are not judged against 0.
    """
    nh, nk = np.linalg.norm(h), np.linalg.norm(k)
    if nh == 0 or nk == 0:
        return 0.0
    h, k = h / nh, k / nk
    gnorm = max(1.0, np.max(np.abs(g)))
    step = eps * gnorm
    fd = (flux_jacobian(params, g + step * k) - flux_jacobian(params, g - step * k)) @ h / (2 * step)
    exact = flux_hessian_apply(params, g, h, k)
    ref = max(np.max(np.abs(exact)), np.max(np.abs(fd)),
              1e-3 * np.max(np.abs(flux_jacobian(params, g))) / gnorm)
    return np.max(np.abs(exact - fd)) / ref


def fd_jacobian(residual, x, eps=1e-7):
    """Dense central-difference Jacobian of a vector function."""
    r0 = residual(x)
    J = np.empty((len(r0), len(x)))
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = eps
        J[:, j] = (residual(x + e) - residual(x - e)) / (2 * eps)
    return J
