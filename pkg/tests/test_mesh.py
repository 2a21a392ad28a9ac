import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spacetime_carreau.mesh import (
    INITIAL,
    LATERAL,
    TERMINAL,
    DegenerateElementError,
    DomainSpec,
    SimplexMesh,
    build_tensor_simplex_mesh,
    element_geometry,
    locate_point,
    locate_points,
    validate_mesh,
)


@pytest.mark.parametrize("divisions", [(3, 2), (2, 3, 2), (2, 2, 1, 3)])
def test_kuhn_counts_and_validity(divisions):
    d = len(divisions) - 1
    dom = DomainSpec(d, (-0.5,) * d, (0.5,) * d, 2.0)
    mesh = build_tensor_simplex_mesh(dom, divisions)
    D = d + 1
    assert mesh.dim == D
    assert mesh.n_vertices == np.prod(np.array(divisions) + 1)
    assert mesh.n_elements == np.prod(divisions) * math.factorial(D)
    assert np.all(mesh.geometry.volumes > 0)
    assert math.isclose(mesh.geometry.volumes.sum(), dom.measure, rel_tol=1e-12)
    assert validate_mesh(mesh) == []


def test_every_cell_split_into_equal_volumes():
    mesh = build_tensor_simplex_mesh(DomainSpec.unit(2), (2, 2, 2))
    np.testing.assert_allclose(mesh.geometry.volumes, 1 / 8 / 6, rtol=1e-14)


def test_vertex_ordering_first_axis_fastest():
    mesh = build_tensor_simplex_mesh(DomainSpec.unit(1, T=2.0), (2, 3))
    np.testing.assert_allclose(mesh.vertices[:4], [[0, 0], [0.5, 0], [1, 0], [0, 2 / 3]])
    np.testing.assert_allclose(mesh.vertices[-1], [1, 2])


def test_node_tags_1d():
    mesh = build_tensor_simplex_mesh(DomainSpec.unit(1), (4, 3))
    tags = mesh.node_tags
    x, t = mesh.vertices.T
    assert np.array_equal((tags & LATERAL) > 0, (x == 0) | (x == 1))
    assert np.array_equal((tags & INITIAL) > 0, t == 0)
    assert np.array_equal((tags & TERMINAL) > 0, t == 1)
    assert mesh.tag_counts() == {"interior": 6, "lateral": 4, "initial": 3, "terminal": 3,
                                 "lateral∩initial": 2, "lateral∩terminal": 2}


def test_orientation_is_normalized():
    verts = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])  # clockwise
    mesh = SimplexMesh(verts, np.array([[0, 1, 2]]))
    e = mesh.elements[0]
    p = mesh.vertices[e]
    assert np.linalg.det(np.stack([p[1] - p[0], p[2] - p[0]], axis=1)) > 0
    assert validate_mesh(mesh) == []


def test_degenerate_element_detected():
    verts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 1.0]])
    mesh = SimplexMesh(verts, np.array([[0, 1, 2], [0, 1, 3]]))
    with pytest.raises(DegenerateElementError):
        mesh.geometry
    assert any("non-positive" in v for v in validate_mesh(mesh))


def test_validate_reports_nonconforming_mesh():
    # two triangles sharing only a vertex leave an interior hole edge
    mesh = build_tensor_simplex_mesh(DomainSpec.unit(1), (2, 2))
    broken = SimplexMesh(mesh.vertices, mesh.elements[:-1], mesh.domain, mesh.divisions)
    problems = validate_mesh(broken)
    assert any("element count" in v for v in problems)
    assert any("volume sum" in v for v in problems)
    assert any("non-conforming" in v for v in problems)


def test_bad_domain_rejected():
    with pytest.raises(ValueError):
        DomainSpec(2, (0, 0), (1, 0), 1.0)
    with pytest.raises(ValueError):
        DomainSpec(1, (0,), (1,), 0.0)
    with pytest.raises(ValueError):
        DomainSpec(4, (0,) * 4, (1,) * 4)


def test_element_geometry_gradients_sum_to_zero():
    mesh = build_tensor_simplex_mesh(DomainSpec.unit(3), (2, 2, 2, 2))
    vol, grads = element_geometry(mesh, 17)
    assert vol == pytest.approx(1 / 16 / 24)
    np.testing.assert_allclose(grads.sum(axis=0), 0, atol=1e-12)
    # grad lambda_i . (v_j - v_0) = delta_ij - delta_i0
    p = mesh.vertices[mesh.elements[17]]
    np.testing.assert_allclose(grads @ (p - p[0]).T,
                               np.eye(5) - np.eye(5)[:, [0]], atol=1e-12)


def test_pentatope_count_for_smoke_mesh():
    dom = DomainSpec(3, (-0.5,) * 3, (0.5,) * 3, 1.0)
    mesh = build_tensor_simplex_mesh(dom, (8, 8, 8, 8))
    assert mesh.n_elements == 98304


@settings(max_examples=60, deadline=None)
@given(d=st.integers(1, 3), data=st.data())
def test_locate_point_reconstructs(d, data):
    dom = DomainSpec(d, (-1.0,) * d, (0.5,) * d, 2.0)
    mesh = build_tensor_simplex_mesh(dom, (3,) * (d + 1))
    pt = np.array([data.draw(st.floats(lo, hi)) for lo, hi in
                   zip(dom.box_lower, dom.box_upper)])
    found = locate_point(mesh, pt)
    assert found is not None
    e, bary = found
    assert bary.min() >= -1e-12
    assert bary.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(bary @ mesh.vertices[mesh.elements[e]], pt, atol=1e-12)


def test_locate_outside_and_vertices():
    mesh = build_tensor_simplex_mesh(DomainSpec.unit(2), (2, 2, 2))
    assert locate_point(mesh, [1.1, 0.5, 0.5]) is None
    elems, bary = locate_points(mesh, mesh.vertices)
    assert np.all(elems >= 0)
    recon = np.einsum("nk,nkd->nd", bary, mesh.vertices[mesh.elements[elems]])
    np.testing.assert_allclose(recon, mesh.vertices, atol=1e-14)


def test_locate_without_grid_falls_back():
    mesh = build_tensor_simplex_mesh(DomainSpec.unit(1), (2, 2))
    bare = SimplexMesh(mesh.vertices, mesh.elements)
    e, bary = locate_point(bare, [0.3, 0.7])
    np.testing.assert_allclose(bary @ bare.vertices[bare.elements[e]], [0.3, 0.7])
    assert locate_point(bare, [2.0, 0.0]) is None
