from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermodamage.mesh import MeshError, build_mesh, mesh_from_text, mesh_to_text, read_mesh, simplex_quadrature, write_mesh


def test_interval_mesh_counts():
    m = build_mesh([(0.0, 2.0)], 9)
    assert m.n_nodes == 9 and m.n_elems == 8
    assert m.volume == pytest.approx(2.0)
    assert m.lumped_mass.sum() == pytest.approx(2.0)
    assert set(m.boundary_nodes("dirichlet_u")) == {0, 8}


def test_rectangle_mesh_counts():
    m = build_mesh([(0.0, 2.0), (0.0, 1.0)], (5, 4))
    assert m.n_nodes == 20
    assert m.n_elems == 2 * 4 * 3
    assert m.volume == pytest.approx(2.0)
    assert m.lumped_mass.sum() == pytest.approx(2.0)
    assert len(m.boundary_nodes()) == 2 * (5 + 4) - 4
    # [DERIVED] Euler relation for a triangulated disc: V - E + F = 1
    assert m.n_nodes - m.n_edges() + m.n_elems == 1


def test_boundary_weights_sum_to_boundary_measure():
    m2 = build_mesh([(0.0, 2.0), (0.0, 1.0)], (5, 4))
    assert m2.boundary_weights().sum() == pytest.approx(6.0)
    m1 = build_mesh([(0.0, 1.0)], 5)
    assert m1.boundary_weights().sum() == pytest.approx(2.0)


def test_gradients_of_barycentric_functions_sum_to_zero():
    m = build_mesh([(0.0, 1.0), (0.0, 1.0)], 4)
    assert np.allclose(m.grads.sum(axis=1), 0.0)
    f = 2.0 * m.nodes[:, 0] - 3.0 * m.nodes[:, 1]
    assert np.allclose(m.element_gradient(f), [2.0, -3.0])


@pytest.mark.parametrize("a,b,c", [(0, 0, 0), (1, 0, 0), (2, 1, 0), (1, 1, 1), (3, 0, 0), (2, 2, 2)])
def test_triangle_quadrature_exactness(a, b, c):
    # [DERIVED] mean over the simplex of l1^a l2^b l3^c = 2 a! b! c! / (a+b+c+2)!
    bary, w = simplex_quadrature(2, 4)
    val = np.dot(w, bary[:, 0] ** a * bary[:, 1] ** b * bary[:, 2] ** c)
    exact = 2.0 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)
    assert val == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("deg", range(8))
def test_interval_quadrature_exactness(deg):
    bary, w = simplex_quadrature(1, 4)
    assert np.dot(w, bary[:, 1] ** deg) == pytest.approx(1.0 / (deg + 1), rel=1e-12)


def test_interpolate_at_vertices():
    m = build_mesh([(0.0, 1.0), (0.0, 1.0)], 3)
    f = np.arange(m.n_nodes, dtype=float)
    vals = m.interpolate_at(f, np.eye(3))
    assert np.allclose(vals, f[m.elems])


@pytest.mark.parametrize("ext,res", [([(0, 1)], 1), ([(1, 1)], 4), ([(0, 1), (0, 1), (0, 1)], 3)])
def test_invalid_meshes(ext, res):
    with pytest.raises(MeshError):
        build_mesh(ext, res)


@settings(max_examples=25, deadline=None)
@given(
    st.floats(-5, 5),
    st.floats(0.1, 10),
    st.integers(2, 6),
    st.integers(2, 6),
    st.booleans(),
)
def test_text_round_trip(lo, length, nx, ny, two_d):
    ext = [(lo, lo + length), (lo, lo + 0.5 * length)] if two_d else [(lo, lo + length)]
    res = (nx, ny) if two_d else nx
    m = build_mesh(ext, res)
    m2 = mesh_from_text(mesh_to_text(m))
    assert np.array_equal(m.nodes, m2.nodes)
    assert np.array_equal(m.elems, m2.elems)
    assert np.array_equal(m.facets, m2.facets)
    assert list(m.facet_tags) == list(m2.facet_tags)


def test_file_round_trip(tmp_path):
    m = build_mesh([(0, 1), (0, 2)], (3, 4))
    write_mesh(m, tmp_path / "m.txt")
    m2 = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(m.nodes, m2.nodes)


def test_inverted_element_rejected():
    m = build_mesh([(0, 1)], 3)
    with pytest.raises(MeshError):
        type(m)(1, m.nodes, m.elems[:, ::-1] * 0, m.facets)
