from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixhho.basis_quad import (CellBasis, FaceBasis, cell_quadrature, face_quadrature, gram_matrix,
                               l2_project, legendre01, legendre01_deriv, orthonormalize_basis,
                               singular_cell_quadrature)
from mixhho.errors import GeometryError

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def moment(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def test_cell_rule_area_and_xy():
    q0 = cell_quadrature(0)
    assert q0.weights.sum() == pytest.approx(0.5, abs=1e-15)
    q2 = cell_quadrature(2)
    x, y = q2.points.T
    assert np.dot(q2.weights, x * y) == pytest.approx(1 / 24, abs=1e-15)


@pytest.mark.parametrize("exactness", [14, 21, 30])
def test_cell_rule_moments(exactness):
    q = cell_quadrature(exactness)
    assert np.all(q.weights > 0)
    x, y = q.points.T
    for a in range(exactness + 1):
        for b in range(exactness + 1 - a):
            assert np.dot(q.weights, x ** a * y ** b) == pytest.approx(moment(a, b), rel=1e-12, abs=1e-16)


def test_face_rule_moments():
    assert np.dot(face_quadrature(1).weights, face_quadrature(1).points) == pytest.approx(0.5)
    q3 = face_quadrature(3)
    assert len(q3) == 2
    assert np.dot(q3.weights, q3.points ** 3) == pytest.approx(0.25, abs=1e-15)
    q = face_quadrature(21)
    for n in range(22):
        assert np.dot(q.weights, q.points ** n) == pytest.approx(1 / (n + 1), rel=1e-13)


@pytest.mark.parametrize("bad", [-1, 81])
def test_rule_rejects_unsupported_exactness(bad):
    with pytest.raises(ValueError):
        cell_quadrature(bad)
    with pytest.raises(ValueError):
        face_quadrature(bad)


def test_degree0_basis_is_inverse_sqrt_area():
    tri = np.array([[0.2, 0.1], [2.0, 0.3], [0.5, 1.7]])
    b = CellBasis(tri, 0)
    v, g = b.eval(tri.mean(axis=0)[None])
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    assert v[0, 0] == pytest.approx(1 / np.sqrt(area))
    assert np.allclose(g, 0)


def test_gram_identity_on_reference_and_sliver():
    assert np.allclose(gram_matrix(CellBasis(REF, 1)), np.eye(3), atol=1e-14)
    sliver = np.array([[0.0, 0.0], [50.0, 0.0], [25.0, 1.0]])
    b = CellBasis(sliver, 5)
    G = gram_matrix(b, exactness=20)
    assert np.abs(G - np.eye(b.dim)).max() <= 1e-10


def test_face_basis_gram():
    f = FaceBasis([0.3, -1.0], [2.0, 4.0], 6)
    assert np.abs(gram_matrix(f, exactness=20) - np.eye(7)).max() <= 1e-12


def test_degenerate_geometry():
    with pytest.raises(GeometryError):
        CellBasis([[0, 0], [1, 1], [2, 2]], 1)
    with pytest.raises(GeometryError):
        FaceBasis([1, 1], [1, 1], 0)
    with pytest.raises(GeometryError):
        orthonormalize_basis(np.zeros((4, 2)), 1)


def test_projection_reproduces_linear_function():
    b = CellBasis(REF, 1)
    c = l2_project(b, lambda x: x[:, 0])
    pts = np.array([[0.1, 0.2], [0.7, 0.1], [0.3, 0.3]])
    assert np.allclose(b.eval(pts)[0] @ c, pts[:, 0], atol=1e-14)


def test_projection_degree0_is_mean():
    b = CellBasis(REF, 0)
    c = l2_project(b, lambda x: np.sin(np.pi * x[:, 0]), exactness=40)
    # mean of sin(pi x) over the reference triangle: int_0^1 sin(pi x)(1 - x) dx / (1/2)
    mean = (1 / np.pi) / 0.5
    assert c[0] * b.eval(np.array([[0.2, 0.2]]))[0][0, 0] == pytest.approx(mean, rel=1e-12)


def test_projection_orthogonality_residual():
    tri = np.array([[0.0, 0.0], [1.3, 0.2], [0.4, 0.9]])
    b = CellBasis(tri, 3)
    f = lambda x: np.exp(x[:, 0] + x[:, 1])  # noqa: E731
    c = l2_project(b, f, exactness=30)
    x, w = b.quadrature(30)
    v, _ = b.eval(x)
    res = v.T @ (w * (f(x) - v @ c))
    fnorm = np.sqrt(np.dot(w, f(x) ** 2))
    assert np.abs(res).max() <= 1e-12 * fnorm


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 8), st.floats(0.0, 1.0))
def test_legendre_derivative_matches_finite_difference(deg, s):
    h = 1e-6
    s = min(max(s, h), 1 - h)
    fd = (legendre01(deg, np.array([s + h])) - legendre01(deg, np.array([s - h]))) / (2 * h)
    assert np.allclose(legendre01_deriv(deg, np.array([s])), fd, atol=1e-5 * (deg + 1) ** 2)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.integers(0, 6))
def test_physical_basis_orthonormal_for_random_triangles(coords, deg):
    tri = np.array(coords).reshape(3, 2)
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    area2 = e1[0] * e2[1] - e1[1] * e2[0]
    lengths = [np.linalg.norm(tri[i] - tri[j]) for i, j in ((0, 1), (1, 2), (2, 0))]
    if max(lengths) < 1e-3 or abs(area2) < 1e-2 * max(lengths) ** 2:
        return
    G = gram_matrix(CellBasis(tri, deg), exactness=2 * deg + 2)
    assert np.abs(G - np.eye(len(G))).max() < 1e-11


def test_singular_rule_integrates_radial_singularity():
    tri = REF
    pts, w = singular_cell_quadrature(tri, 0, 30)
    # integrate 1 and a polynomial first
    assert w.sum() == pytest.approx(0.5, rel=1e-12)
    assert np.dot(w, pts[:, 0] * pts[:, 1]) == pytest.approx(1 / 24, rel=1e-10)
    r = np.hypot(pts[:, 0], pts[:, 1])
    # int_K r^-1 = int_0^{pi/2} int_0^{R(t)} dr dt with R(t) = 1/(cos t + sin t)
    from scipy.integrate import quad
    ref, _ = quad(lambda t: 1 / (np.cos(t) + np.sin(t)), 0, np.pi / 2, epsabs=1e-14)
    assert np.dot(w, 1 / r) == pytest.approx(ref, rel=1e-10)
    # gradient-squared singularity of r^0.1: int_K r^-1.8 = int R(t)^0.2 / 0.2 dt
    ref, _ = quad(lambda t: (np.cos(t) + np.sin(t)) ** -0.2 / 0.2, 0, np.pi / 2, epsabs=1e-14)
    assert np.dot(w, r ** -1.8) == pytest.approx(ref, rel=1e-8)
