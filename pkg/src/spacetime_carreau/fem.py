"""Continuous P1 finite elements on space-time simplices."""
from __future__ import annotations

import itertools
import math
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import INITIAL, LATERAL, TERMINAL, ElementGeometry, SimplexMesh, locate_points

__all__ = [
    "NodalField",
    "DofMask",
    "NonFiniteError",
    "p1_local_mass",
    "simplex_quadrature",
    "assemble_bilinear",
    "assemble_linear",
    "mass_matrix",
    "interpolate",
    "evaluate",
    "evaluate_points",
    "l2_norm_Q",
    "l2_error",
]


class NonFiniteError(FloatingPointError):
    pass


@dataclass(eq=False)
class NodalField:
    """One real value per mesh vertex."""

    mesh: SimplexMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError(
                f"field has shape {self.values.shape}, mesh has {self.mesh.n_vertices} vertices")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError("field contains non-finite values")

    @classmethod
    def zeros(cls, mesh: SimplexMesh) -> "NodalField":
        return cls(mesh, np.zeros(mesh.n_vertices))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def values_of(field) -> np.ndarray:
    if isinstance(field, NodalField):
        return field.values
    return np.asarray(field, dtype=float)


@dataclass(frozen=True, eq=False)
class DofMask:
    """Free/constrained flags per vertex; constrained vertices always hold 0."""

    free: np.ndarray

    @classmethod
    def full(cls, mesh: SimplexMesh) -> "DofMask":
        return cls(np.ones(mesh.n_vertices, dtype=bool))

    @classmethod
    def from_tags(cls, mesh: SimplexMesh, constrained_bits: int) -> "DofMask":
        return cls((mesh.node_tags & constrained_bits) == 0)

    @classmethod
    def state(cls, mesh: SimplexMesh) -> "DofMask":
        """Trial space of the state: zero on the lateral boundary and at t = 0."""
        return cls.from_tags(mesh, LATERAL | INITIAL)

    @classmethod
    def adjoint(cls, mesh: SimplexMesh) -> "DofMask":
        """Adjoint/test space: zero on the lateral boundary and at t = T."""
        return cls.from_tags(mesh, LATERAL | TERMINAL)

    @classmethod
    def lateral(cls, mesh: SimplexMesh) -> "DofMask":
        """Zero on the lateral boundary only."""
        return cls.from_tags(mesh, LATERAL)

    @cached_property
    def free_indices(self) -> np.ndarray:
        return np.flatnonzero(self.free)

    @cached_property
    def equation_index(self) -> np.ndarray:
        """Map vertex -> equation number, -1 for constrained vertices."""
        index = np.full(len(self.free), -1, dtype=np.int64)
        index[self.free_indices] = np.arange(len(self.free_indices))
        return index

    @property
    def n_free(self) -> int:
        return len(self.free_indices)

    def restrict(self, values) -> np.ndarray:
        return values_of(values)[self.free_indices]

    def extend(self, x) -> np.ndarray:
        full = np.zeros(len(self.free))
        full[self.free_indices] = x
        return full


def p1_local_mass(volume: float, D: int) -> np.ndarray:
    """Exact ``int lambda_i lambda_j`` over a ``D``-simplex of the given volume."""
    if not volume > 0:
        raise ValueError("volume must be positive")
    return volume * (np.ones((D + 1, D + 1)) + np.eye(D + 1)) / ((D + 1) * (D + 2))


@lru_cache(maxsize=None)
def simplex_quadrature(D: int, degree: int):
    """Symmetric quadrature on the ``D``-simplex.

    Returns barycentric points ``(q, D + 1)`` and weights summing to 1
    (multiply by the element volume).  Degree 2 uses the ``D + 1`` point
    interior rule; other degrees use Grundmann-Moeller rules.
    """
    if degree <= 1:
        return np.full((1, D + 1), 1.0 / (D + 1)), np.ones(1)
    if degree == 2:
        b = (D + 2 - math.sqrt(D + 2)) / ((D + 1) * (D + 2))
        a = 1.0 - D * b
        pts = np.full((D + 1, D + 1), b)
        np.fill_diagonal(pts, a)
        return pts, np.full(D + 1, 1.0 / (D + 1))
    s = (degree - 1) // 2 + (degree % 2 == 0)
    d = 2 * s + 1
    points, weights = [], []
    for i in range(s + 1):
        w = ((-1) ** i * 2.0 ** (-2 * s) * (d + D - 2 * i) ** d
             / (math.factorial(i) * math.factorial(d + D - i)))
        for beta in _compositions(s - i, D + 1):
            points.append([(2 * b + 1) / (d + D - 2 * i) for b in beta])
            weights.append(w * math.factorial(D))
    return np.array(points), np.array(weights)


def _compositions(total, parts):
    for cuts in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cuts:
            out.append(c - prev - 1)
            prev = c
        out.append(total + parts - 2 - prev)
        yield tuple(out)


def _check_finite(local, elems):
    bad = ~np.all(np.isfinite(local.reshape(len(local), -1)), axis=1)
    if np.any(bad):
        raise NonFiniteError(f"non-finite local values on element {elems[np.argmax(bad)]}")


def _assemble_chunk(mesh, kernel, elems):
    local = np.asarray(kernel(mesh.geometry, elems), dtype=float)
    _check_finite(local, elems)
    conn = mesh.elements[elems]
    nloc = conn.shape[1]
    rows = np.repeat(conn, nloc, axis=1).ravel()
    cols = np.tile(conn, (1, nloc)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_bilinear(mesh: SimplexMesh, kernel, trial_mask: DofMask | None = None,
                      test_mask: DofMask | None = None, workers: int = 1) -> sp.csr_matrix:
    """Assemble a global matrix from batched local matrices.

    ``kernel(geometry, elems)`` returns an array ``(len(elems), D+1, D+1)``
    with entry ``[e, j, k]`` pairing test function ``j`` with trial
    function ``k``.  Rows of the result are the free test dofs, columns the
    free trial dofs.  With ``workers > 1`` the elements are split into
    contiguous chunks assembled concurrently and summed.
    """
    elems = np.arange(mesh.n_elements)
    if workers <= 1:
        A = _assemble_chunk(mesh, kernel, elems)
    else:
        chunks = np.array_split(elems, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _assemble_chunk(mesh, kernel, c), chunks))
        A = parts[0]
        for part in parts[1:]:
            A = A + part
    if test_mask is not None:
        A = A[test_mask.free_indices]
    if trial_mask is not None:
        A = A[:, trial_mask.free_indices]
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_linear(mesh: SimplexMesh, local: np.ndarray, test_mask: DofMask | None = None):
    """Sum per-element vectors ``(E, D+1)`` into a global vector."""
    local = np.asarray(local, dtype=float)
    _check_finite(local, np.arange(len(local)))
    vec = np.bincount(mesh.elements.ravel(), weights=local.ravel(),
                      minlength=mesh.n_vertices)
    if test_mask is not None:
        vec = vec[test_mask.free_indices]
    return vec


def mass_kernel(geo: ElementGeometry, elems) -> np.ndarray:
    D = geo.grad_lambda.shape[2]
    ref = (np.ones((D + 1, D + 1)) + np.eye(D + 1)) / ((D + 1) * (D + 2))
    return geo.volumes[elems, None, None] * ref


_MASS_CACHE: "weakref.WeakKeyDictionary[SimplexMesh, sp.csr_matrix]" = weakref.WeakKeyDictionary()


def mass_matrix(mesh: SimplexMesh) -> sp.csr_matrix:
    """Full (unmasked) P1 mass matrix of the space-time mesh, cached per mesh."""
    M = _MASS_CACHE.get(mesh)
    if M is None:
        M = assemble_bilinear(mesh, mass_kernel)
        _MASS_CACHE[mesh] = M
    return M


def interpolate(mesh: SimplexMesh, g) -> NodalField:
    """Nodal interpolant of ``g``.

    ``g`` is called with the ``(N, D)`` vertex array and should return
    ``N`` values; functions of a single point are applied vertex by vertex.
    """
    try:
        vals = np.asarray(g(mesh.vertices), dtype=float)
    except (TypeError, ValueError, IndexError):
        vals = None
    if vals is None or vals.shape != (mesh.n_vertices,):
        if vals is not None and vals.ndim == 0:
            vals = np.full(mesh.n_vertices, float(vals))
        else:
            vals = np.array([float(g(v)) for v in mesh.vertices])
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise NonFiniteError(f"interpolated function is not finite at vertex {bad[0]}")
    return NodalField(mesh, vals)


def evaluate_points(mesh: SimplexMesh, field, points) -> np.ndarray:
    elems, bary = locate_points(mesh, points)
    if np.any(elems < 0):
        raise ValueError(f"{int(np.sum(elems < 0))} point(s) outside the space-time domain")
    vals = values_of(field)[mesh.elements[elems]]
    return np.einsum("nk,nk->n", bary, vals)


def evaluate(mesh: SimplexMesh, field, point) -> float:
    """Value of a P1 field at one space-time point."""
    return float(evaluate_points(mesh, field, np.asarray(point, dtype=float)[None])[0])


def l2_norm_Q(mesh: SimplexMesh, field) -> float:
    v = values_of(field)
    return math.sqrt(max(float(v @ (mass_matrix(mesh) @ v)), 0.0))


def l2_error(mesh: SimplexMesh, field, exact, quad_degree: int = 3) -> float:
    """``L2(Q)`` distance between a P1 field and a smooth function, by quadrature."""
    if quad_degree not in (2, 3):
        raise ValueError("quad_degree must be 2 or 3")
    return _quadrature_l2(mesh, field, exact, quad_degree)


def _quadrature_l2(mesh, field, exact, degree):
    bary, weights = simplex_quadrature(mesh.dim, degree)
    pts = mesh.vertices[mesh.elements]
    qpts = np.einsum("qk,ekd->eqd", bary, pts)
    uh = np.einsum("qk,ek->eq", bary, values_of(field)[mesh.elements])
    ex = np.asarray(exact(qpts.reshape(-1, mesh.dim)), dtype=float).reshape(uh.shape)
    err2 = np.einsum("e,q,eq->", mesh.geometry.volumes, weights, (uh - ex) ** 2)
    return math.sqrt(max(float(err2), 0.0))
