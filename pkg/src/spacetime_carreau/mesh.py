"""Kuhn-triangulated simplicial meshes of space-time cylinders.

The cylinder is ``Omega x (0, T)`` with ``Omega`` an axis-aligned box in
``d`` spatial dimensions.  Time is always the last coordinate axis, so the
mesh dimension is ``D = d + 1`` and the elements are triangles, tetrahedra
or pentatopes for ``d = 1, 2, 3``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "LATERAL",
    "INITIAL",
    "TERMINAL",
    "DomainSpec",
    "SimplexMesh",
    "DegenerateElementError",
    "build_tensor_simplex_mesh",
    "element_geometry",
    "locate_point",
    "locate_points",
    "validate_mesh",
    "tag_name",
]

# node tag bits; a vertex may carry LATERAL together with INITIAL or TERMINAL
LATERAL = 1
INITIAL = 2
TERMINAL = 4

_TAG_NAMES = {
    0: "interior",
    LATERAL: "lateral",
    INITIAL: "initial",
    TERMINAL: "terminal",
    LATERAL | INITIAL: "lateral∩initial",
    LATERAL | TERMINAL: "lateral∩terminal",
}

LOCATE_TOL = 1e-12


def tag_name(tag: int) -> str:
    return _TAG_NAMES[int(tag)]


class DegenerateElementError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    """Box ``[lower, upper]`` in space times the interval ``(0, T)``."""

    spatial_dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    T: float = 1.0

    def __post_init__(self):
        if self.spatial_dim not in (1, 2, 3):
            raise ValueError(f"spatial_dim must be 1, 2 or 3, got {self.spatial_dim}")
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lower) != self.spatial_dim or len(upper) != self.spatial_dim:
            raise ValueError("lower/upper must have spatial_dim entries")
        if any(lo >= up for lo, up in zip(lower, upper)):
            raise ValueError(f"need lower < upper componentwise, got {lower} and {upper}")
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "T", float(self.T))

    @classmethod
    def unit(cls, spatial_dim: int, T: float = 1.0) -> "DomainSpec":
        return cls(spatial_dim, (0.0,) * spatial_dim, (1.0,) * spatial_dim, T)

    @property
    def mesh_dim(self) -> int:
        return self.spatial_dim + 1

    @property
    def box_lower(self) -> np.ndarray:
        return np.array(self.lower + (0.0,))

    @property
    def box_upper(self) -> np.ndarray:
        return np.array(self.upper + (self.T,))

    @property
    def measure(self) -> float:
        return float(np.prod(self.box_upper - self.box_lower))


@dataclass(eq=False)
class SimplexMesh:
    """Conforming simplicial mesh of a space-time box.

    ``vertices`` has shape ``(N, D)``, ``elements`` shape ``(E, D + 1)``.
    Elements are reoriented on construction so that every signed volume is
    positive.  ``divisions`` is set for tensor-grid meshes and enables the
    fast cell lookup in :func:`locate_points`.
    """

    vertices: np.ndarray
    elements: np.ndarray
    domain: DomainSpec | None = None
    divisions: tuple[int, ...] | None = None
    node_tags: np.ndarray | None = None
    _perm_lookup: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.elements = np.array(self.elements, dtype=np.int64)
        if self.vertices.ndim != 2 or self.elements.ndim != 2:
            raise ValueError("vertices and elements must be 2d arrays")
        if self.elements.shape[1] != self.dim + 1:
            raise ValueError("elements must list D + 1 vertices each")
        _normalize_orientation(self.vertices, self.elements)
        if self.node_tags is None:
            self.node_tags = _classify_nodes(self.vertices, self.domain)
        self.node_tags = np.asarray(self.node_tags, dtype=np.int8)
        for arr in (self.vertices, self.elements, self.node_tags):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def spatial_dim(self) -> int:
        return self.dim - 1

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @cached_property
    def geometry(self) -> "ElementGeometry":
        return ElementGeometry.from_mesh(self)

    @cached_property
    def h(self) -> float:
        """Largest element diameter (longest edge)."""
        pts = self.vertices[self.elements]
        hmax = 0.0
        for i, j in itertools.combinations(range(self.dim + 1), 2):
            hmax = max(hmax, float(np.max(np.linalg.norm(pts[:, i] - pts[:, j], axis=1))))
        return hmax

    @property
    def time_levels(self) -> np.ndarray | None:
        if self.divisions is None or self.domain is None:
            return None
        return np.linspace(0.0, self.domain.T, self.divisions[-1] + 1)

    def tag_counts(self) -> dict[str, int]:
        tags, counts = np.unique(self.node_tags, return_counts=True)
        return {tag_name(t): int(c) for t, c in zip(tags, counts)}


@dataclass(frozen=True)
class ElementGeometry:
    """Batched P1 geometry: volumes ``(E,)`` and barycentric gradients ``(E, D+1, D)``."""

    volumes: np.ndarray
    grad_lambda: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: SimplexMesh) -> "ElementGeometry":
        pts = mesh.vertices[mesh.elements]
        edges = np.swapaxes(pts[:, 1:] - pts[:, :1], 1, 2)  # columns v_k - v_0
        det = np.linalg.det(edges)
        D = mesh.dim
        volumes = np.abs(det) / math.factorial(D)
        floor = 1e-14 * mesh.h**D
        bad = np.flatnonzero(volumes < floor)
        if bad.size:
            raise DegenerateElementError(
                f"element {bad[0]} is degenerate (volume {volumes[bad[0]]:.3e})")
        inv = np.linalg.inv(edges)  # row k is grad lambda_{k+1}
        grads = np.empty((len(volumes), D + 1, D))
        grads[:, 1:] = inv
        grads[:, 0] = -inv.sum(axis=1)
        volumes.setflags(write=False)
        grads.setflags(write=False)
        return cls(volumes, grads)


def _signed_volumes(vertices, elements):
    pts = vertices[elements]
    return np.linalg.det(np.swapaxes(pts[:, 1:] - pts[:, :1], 1, 2))


def _normalize_orientation(vertices, elements):
    neg = _signed_volumes(vertices, elements) < 0
    if np.any(neg):
        elements[neg, 1], elements[neg, 2] = elements[neg, 2].copy(), elements[neg, 1].copy()


def _classify_nodes(vertices, domain):
    tags = np.zeros(len(vertices), dtype=np.int8)
    if domain is None:
        return tags
    lo, up = domain.box_lower, domain.box_upper
    scale = np.max(up - lo)
    tol = 1e-12 * scale
    x = vertices[:, :-1]
    t = vertices[:, -1]
    lateral = np.any((np.abs(x - lo[:-1]) <= tol) | (np.abs(x - up[:-1]) <= tol), axis=1)
    tags[lateral] |= LATERAL
    tags[np.abs(t - lo[-1]) <= tol] |= INITIAL
    tags[np.abs(t - up[-1]) <= tol] |= TERMINAL
    return tags


def _strides(shape):
    # first axis fastest, time (last axis) slowest
    return np.concatenate([[1], np.cumprod(shape[:-1])]).astype(np.int64)


def build_tensor_simplex_mesh(domain: DomainSpec, divisions) -> SimplexMesh:
    """Split every cell of a tensor grid into ``D!`` Kuhn simplices.

    For a permutation ``s`` of the axes, the simplex walks from the cell's
    lower corner along ``e_s[0]``, then ``e_s[1]``, and so on, ending at
    the opposite corner.  All cells use the same rule, which makes the
    triangulation conforming.
    """
    D = domain.mesh_dim
    divisions = tuple(int(m) for m in np.atleast_1d(divisions))
    if len(divisions) != D:
        raise ValueError(f"need {D} divisions (space then time), got {len(divisions)}")
    if any(m < 1 for m in divisions):
        raise ValueError(f"divisions must be positive, got {divisions}")

    npts = np.array(divisions) + 1
    axes = [np.linspace(lo, up, m + 1)
            for lo, up, m in zip(domain.box_lower, domain.box_upper, divisions)]
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.ravel(order="F") for g in grid], axis=1)

    vstride = _strides(npts)
    cell_idx = np.indices(divisions).reshape(D, -1, order="F")
    origins = vstride @ cell_idx

    perms = list(itertools.permutations(range(D)))
    offsets = np.zeros((len(perms), D + 1), dtype=np.int64)
    for k, perm in enumerate(perms):
        offsets[k, 1:] = np.cumsum(vstride[list(perm)])
    elements = (origins[:, None, None] + offsets[None]).reshape(-1, D + 1)

    lookup = np.full(D**D, -1, dtype=np.int64)
    for k, perm in enumerate(perms):
        lookup[_perm_code(np.array(perm), D)] = k
    return SimplexMesh(vertices, elements, domain=domain, divisions=divisions,
                       _perm_lookup=lookup)


def _perm_code(perm, D):
    weights = D ** np.arange(D)
    return np.asarray(perm) @ weights


def element_geometry(mesh: SimplexMesh, elem: int):
    """Volume and the ``D + 1`` constant barycentric gradients of one element."""
    if not 0 <= elem < mesh.n_elements:
        raise IndexError(f"element index {elem} out of range")
    geo = mesh.geometry
    return float(geo.volumes[elem]), geo.grad_lambda[elem].copy()


def _barycentric(mesh, elems, points):
    pts = mesh.vertices[mesh.elements[elems]]
    v0 = pts[:, 0]
    grads = mesh.geometry.grad_lambda[elems]
    lam = np.einsum("ekd,ed->ek", grads, points - v0)
    lam[:, 0] += 1.0
    return lam


def locate_points(mesh: SimplexMesh, points):
    """Vectorized point location.

    Returns ``(elems, bary)``; ``elems[i] == -1`` marks points outside the
    mesh (beyond a ``1e-12`` tolerance).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != mesh.dim:
        raise ValueError(f"points must have {mesh.dim} coordinates")
    n = len(points)
    elems = np.full(n, -1, dtype=np.int64)
    bary = np.full((n, mesh.dim + 1), np.nan)
    if mesh.divisions is None or mesh.domain is None or mesh._perm_lookup is None:
        return _locate_brute_force(mesh, points)

    D = mesh.dim
    lo, up = mesh.domain.box_lower, mesh.domain.box_upper
    span = up - lo
    tol = LOCATE_TOL * np.max(span)
    inside = np.all((points >= lo - tol) & (points <= up + tol), axis=1)
    if not np.any(inside):
        return elems, bary
    m = np.array(mesh.divisions)
    scaled = (points[inside] - lo) / span * m
    cell = np.clip(np.floor(scaled), 0, m - 1).astype(np.int64)
    local = scaled - cell
    perm = np.argsort(-local, axis=1, kind="stable")
    k = mesh._perm_lookup[_perm_code(perm, D)]
    cell_id = cell @ _strides(m)
    found = cell_id * math.factorial(D) + k
    lam = _barycentric(mesh, found, points[inside])
    elems[inside] = found
    bary[inside] = lam
    return elems, bary


def _locate_brute_force(mesh, points):
    n = len(points)
    elems = np.full(n, -1, dtype=np.int64)
    bary = np.full((n, mesh.dim + 1), np.nan)
    all_elems = np.arange(mesh.n_elements)
    for i, p in enumerate(points):
        lam = _barycentric(mesh, all_elems, np.broadcast_to(p, (mesh.n_elements, mesh.dim)))
        worst = lam.min(axis=1)
        e = int(np.argmax(worst))
        if worst[e] >= -LOCATE_TOL:
            elems[i] = e
            bary[i] = lam[e]
    return elems, bary


def locate_point(mesh: SimplexMesh, point):
    """Element index and barycentric coordinates of ``point``, or ``None`` if outside."""
    elems, bary = locate_points(mesh, np.asarray(point, dtype=float)[None])
    if elems[0] < 0:
        return None
    return int(elems[0]), bary[0]


def _facet_keys(mesh):
    D = mesh.dim
    facets = np.concatenate(
        [np.delete(mesh.elements, i, axis=1) for i in range(D + 1)], axis=0)
    facets = np.sort(facets, axis=1)
    nv = mesh.n_vertices
    if nv ** D < 2**62:
        keys = facets @ (nv ** np.arange(D, dtype=np.int64))
        _, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    else:
        _, inverse, counts = np.unique(facets, axis=0, return_inverse=True,
                                       return_counts=True)
    return facets, counts[inverse.ravel()]


def validate_mesh(mesh: SimplexMesh) -> list[str]:
    """Check the mesh invariants; returns a list of human-readable violations."""
    problems = []
    D = mesh.dim
    if mesh.elements.min() < 0 or mesh.elements.max() >= mesh.n_vertices:
        return ["element references a vertex out of range"]

    signed = _signed_volumes(mesh.vertices, mesh.elements) / math.factorial(D)
    floor = 1e-14 * mesh.h**D
    nonpos = np.flatnonzero(signed <= floor)
    if nonpos.size:
        problems.append(f"{nonpos.size} element(s) with non-positive volume, first {nonpos[0]}")

    if mesh.divisions is not None:
        expected = int(np.prod(np.array(mesh.divisions) + 1))
        if mesh.n_vertices != expected:
            problems.append(f"vertex count {mesh.n_vertices} != {expected}")
        expected_elems = int(np.prod(mesh.divisions)) * math.factorial(D)
        if mesh.n_elements != expected_elems:
            problems.append(f"element count {mesh.n_elements} != {expected_elems}")

    if mesh.domain is not None:
        total = float(np.sum(np.abs(signed)))
        measure = mesh.domain.measure
        if abs(total - measure) > 1e-12 * measure:
            problems.append(f"volume sum {total!r} differs from |Q| = {measure!r}")
        expected_tags = _classify_nodes(mesh.vertices, mesh.domain)
        if not np.array_equal(expected_tags, mesh.node_tags):
            problems.append("node tags disagree with vertex coordinates")

    facets, counts = _facet_keys(mesh)
    if np.any(counts > 2):
        problems.append(f"{int(np.sum(counts > 2))} facet(s) shared by more than 2 elements")
    if mesh.domain is not None:
        lo, up = mesh.domain.box_lower, mesh.domain.box_upper
        tol = 1e-12 * np.max(up - lo)
        pts = mesh.vertices[facets[counts == 1]]
        on_plane = np.any(np.all(np.abs(pts - lo) <= tol, axis=1)
                          | np.all(np.abs(pts - up) <= tol, axis=1), axis=1)
        if not np.all(on_plane):
            problems.append(
                f"{int(np.sum(~on_plane))} non-conforming facet(s) inside the domain")
    return problems
