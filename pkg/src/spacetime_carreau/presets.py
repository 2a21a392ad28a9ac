"""Data functions for the experiments: moving Gaussian target and manufactured solutions.

Every function takes an ``(N, D)`` array of space-time points (time in the
last column) and returns ``N`` values.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "zero",
    "gaussian_track",
    "track_center",
    "mms_linear_kkt_data",
    "mms_forward_data",
]


def zero(X):
    return np.zeros(np.asarray(X).shape[0])


def track_center(t, spatial_dim, radius=0.25):
    """Centre of the moving target at time(s) ``t``.

    Uses the first ``min(d, 2)`` entries of ``(r sin(pi t), r cos(pi t))``;
    in three space dimensions the third coordinate is ``t`` itself.
    """
    t = np.asarray(t, dtype=float)
    comps = [radius * np.sin(np.pi * t), radius * np.cos(np.pi * t)][: min(spatial_dim, 2)]
    if spatial_dim == 3:
        comps.append(t)
    return np.stack(comps, axis=-1)


def gaussian_track(spatial_dim, amplitude=1.0, sharpness=100.0, radius=0.25):
    """``y_d(x, t) = A exp(-s |x - center(t)|^2)``."""

    def y_d(X):
        X = np.asarray(X, dtype=float)
        x, t = X[:, :spatial_dim], X[:, -1]
        diff = x - track_center(t, spatial_dim, radius)
        return amplitude * np.exp(-sharpness * np.sum(diff * diff, axis=1))

    return y_d


def _sines(X, d):
    return np.prod(np.sin(np.pi * X[:, :d]), axis=1)


def mms_linear_kkt_data(spatial_dim, rho=1.0):
    """Exact solution and data for the linear (n = 1) optimality system.

    ``y* = t S(x)``, ``p* = (1 - t) S(x)`` with ``S = prod sin(pi x_i)``;
    the data follow from ``u* = -p*/rho``,
    ``f = d_t y* - lap y* - u*`` and ``y_d = y* + d_t p* + lap p*``.
    """
    d = spatial_dim
    k2 = d * np.pi**2

    def y(X):
        return X[:, -1] * _sines(X, d)

    def p(X):
        return (1 - X[:, -1]) * _sines(X, d)

    def u(X):
        return -p(X) / rho

    def f(X):
        t = X[:, -1]
        return _sines(X, d) * (1 + k2 * t + (1 - t) / rho)

    def y_d(X):
        t = X[:, -1]
        return _sines(X, d) * (t - 1 - k2 * (1 - t))

    return {"y": y, "p": p, "u": u, "f": f, "y_d": y_d}


def mms_forward_data(params, spatial_dim):
    """Exact state ``y* = t S(x)`` and the source ``f = d_t y* - div F(grad y*)``.

    The divergence is differentiated by hand: with ``g = grad y*`` and
    ``H`` its Hessian, ``div F(g) = trace(DF(g) H)``.
    """
    from .model import flux_jacobian

    d = spatial_dim
    pi = np.pi

    def y(X):
        return X[:, -1] * _sines(X, d)

    def f(X):
        X = np.asarray(X, dtype=float)
        x, t = X[:, :d], X[:, -1]
        s, c = np.sin(pi * x), np.cos(pi * x)
        S = np.prod(s, axis=1)
        g = np.empty_like(x)
        H = np.empty(x.shape + (d,))
        for i in range(d):
            others_i = np.prod(np.delete(s, i, axis=1), axis=1)
            g[:, i] = t * pi * c[:, i] * others_i
            for j in range(d):
                if i == j:
                    H[:, i, i] = -t * pi**2 * S
                else:
                    rest = np.prod(np.delete(s, [i, j], axis=1), axis=1)
                    H[:, i, j] = t * pi**2 * c[:, i] * c[:, j] * rest
        div = np.einsum("nij,nji->n", flux_jacobian(params, g), H)
        return S - div

    return {"y": y, "f": f}
