"""Quadrature rules, orthonormal polynomial bases and L2 projections.

Reference triangle is ``{x >= 0, y >= 0, x + y <= 1}`` (area 1/2), the
reference edge is ``[0, 1]``.  Cell bases are Dubiner polynomials that are
orthonormal on the reference triangle and mapped affinely to the physical
cell; an affine map preserves L2-orthonormality up to the constant factor
``1/sqrt(2|K|)``, so every cell shares the same coefficient algebra.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi, roots_jacobi

from .errors import GeometryError

MAX_EXACTNESS = 80


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness: int

    def __len__(self):
        return len(self.weights)


def _check_exactness(exactness):
    if exactness < 0 or exactness > MAX_EXACTNESS:
        raise ValueError(f"quadrature exactness must lie in [0, {MAX_EXACTNESS}], got {exactness}")


@lru_cache(maxsize=None)
def _gauss01(m):
    t, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (t + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def face_quadrature(exactness):
    """Gauss-Legendre rule on [0, 1] exact for polynomials of degree ``exactness``."""
    _check_exactness(exactness)
    m = exactness // 2 + 1
    s, w = _gauss01(m)
    s.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(s, w, exactness)


@lru_cache(maxsize=None)
def cell_quadrature(exactness):
    """Collapsed (Stroud conical product) rule on the reference triangle.

    Gauss-Legendre in the collapsed direction and Gauss-Jacobi(1, 0) in the
    other one; all weights are positive.
    """
    _check_exactness(exactness)
    m = exactness // 2 + 1
    u, wu = _gauss01(m)
    t, wt = roots_jacobi(m, 1.0, 0.0)
    v = 0.5 * (t + 1.0)
    wv = 0.25 * wt
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([(U * (1.0 - V)).ravel(), V.ravel()])
    wts = np.outer(wu, wv).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, exactness)


def singular_cell_quadrature(vertices, singular_vertex, exactness, layers=100, ratio=0.2):
    """Physical quadrature on a triangle with a point singularity at one vertex.

    Duffy collapse towards ``vertices[singular_vertex]`` and a geometrically
    graded composite Gauss rule in the radial direction.  Returns points
    (n, 2) and weights (n,) already including the Jacobian.
    """
    vertices = np.asarray(vertices, dtype=float)
    s = vertices[singular_vertex]
    a = vertices[(singular_vertex + 1) % 3]
    b = vertices[(singular_vertex + 2) % 3]
    two_area = abs((a[0] - s[0]) * (b[1] - s[1]) - (a[1] - s[1]) * (b[0] - s[0]))
    m = exactness // 2 + 2
    g, gw = _gauss01(m)
    edges = ratio ** np.arange(layers + 1)
    rho, rw = [], []
    for hi, lo in zip(edges[:-1], edges[1:]):
        rho.append(lo + (hi - lo) * g)
        rw.append((hi - lo) * gw)
    rho = np.concatenate(rho)
    rw = np.concatenate(rw)
    R, T = np.meshgrid(rho, g, indexing="ij")
    WR, WT = np.meshgrid(rw, gw, indexing="ij")
    edge_pt = a[None, None, :] + T[..., None] * (b - a)[None, None, :]
    pts = s + R[..., None] * (edge_pt - s)
    wts = WR * WT * R * two_area
    return pts.reshape(-1, 2), wts.ravel()


# ---------------------------------------------------------------------------
# Reference bases


def cell_dim(degree):
    return (degree + 1) * (degree + 2) // 2


@lru_cache(maxsize=None)
def _dubiner_index(degree):
    return tuple((p, n - p) for n in range(degree + 1) for p in range(n, -1, -1))


def dubiner(degree, points, derivatives=True):
    """Orthonormal Dubiner basis on the reference triangle.

    Functions are ordered by total degree, so the first ``cell_dim(m)``
    columns span P^m for every m <= degree.  Returns ``values`` (npts, dim)
    and, if requested, ``grads`` (npts, dim, 2).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = points[:, 0], points[:, 1]
    npts = len(x)
    a = 2.0 * x + y - 1.0
    t2 = (1.0 - y) ** 2
    dt2_dy = -2.0 * (1.0 - y)

    Q = np.zeros((degree + 1, npts))
    Qx = np.zeros_like(Q)
    Qy = np.zeros_like(Q)
    Q[0] = 1.0
    if degree >= 1:
        Q[1] = a
        Qx[1] = 2.0
        Qy[1] = 1.0
    for p in range(1, degree):
        c1 = (2 * p + 1) / (p + 1)
        c2 = p / (p + 1)
        Q[p + 1] = c1 * a * Q[p] - c2 * t2 * Q[p - 1]
        Qx[p + 1] = c1 * (2.0 * Q[p] + a * Qx[p]) - c2 * t2 * Qx[p - 1]
        Qy[p + 1] = c1 * (Q[p] + a * Qy[p]) - c2 * (dt2_dy * Q[p - 1] + t2 * Qy[p - 1])

    z = 2.0 * y - 1.0
    idx = _dubiner_index(degree)
    vals = np.empty((npts, len(idx)))
    grads = np.empty((npts, len(idx), 2)) if derivatives else None
    for i, (p, q) in enumerate(idx):
        scale = np.sqrt(2.0 * (2 * p + 1) * (p + q + 1))
        J = eval_jacobi(q, 2 * p + 1, 0, z)
        vals[:, i] = scale * Q[p] * J
        if derivatives:
            dJ = (q + 2 * p + 2) * eval_jacobi(q - 1, 2 * p + 2, 1, z) if q > 0 else 0.0
            grads[:, i, 0] = scale * Qx[p] * J
            grads[:, i, 1] = scale * (Qy[p] * J + Q[p] * dJ)
    if derivatives:
        return vals, grads
    return vals


def legendre01(degree, s):
    """Orthonormal Legendre polynomials on [0, 1]; shape (npts, degree+1)."""
    s = np.asarray(s, dtype=float)
    t = 2.0 * s - 1.0
    out = np.empty(s.shape + (degree + 1,))
    p_prev = np.ones_like(t)
    out[..., 0] = 1.0
    if degree >= 1:
        p = t.copy()
        out[..., 1] = np.sqrt(3.0) * p
        for n in range(1, degree):
            p, p_prev = ((2 * n + 1) * t * p - n * p_prev) / (n + 1), p
            out[..., n + 1] = np.sqrt(2.0 * n + 3.0) * p
    return out


@lru_cache(maxsize=None)
def reference_diff_matrices(degree):
    """Matrices D_x, D_y with d/dxi phi_j = sum_i D[i, j] phi_i on the reference cell."""
    q = cell_quadrature(2 * degree)
    vals, grads = dubiner(degree, q.points)
    wv = vals * q.weights[:, None]
    Dx = wv.T @ grads[:, :, 0]
    Dy = wv.T @ grads[:, :, 1]
    n = cell_dim(degree)
    # exact upper structure: derivative of degree-m function has degree m-1
    deg = np.array([p + q_ for p, q_ in _dubiner_index(degree)])
    mask = deg[:, None] < deg[None, :]
    Dx = np.where(mask, Dx, 0.0)
    Dy = np.where(mask, Dy, 0.0)
    assert Dx.shape == (n, n)
    Dx.setflags(write=False)
    Dy.setflags(write=False)
    return Dx, Dy


# local edge e is opposite local vertex e and runs from vertex e+1 to e+2
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def reference_edge_points(edge, s):
    a = REF_VERTICES[(edge + 1) % 3]
    b = REF_VERTICES[(edge + 2) % 3]
    s = np.asarray(s, dtype=float)
    return a + s[:, None] * (b - a)


# ---------------------------------------------------------------------------
# Physical bases


class CellBasis:
    """Orthonormal basis of P^degree on one physical triangle."""

    def __init__(self, vertices, degree):
        vertices = np.asarray(vertices, dtype=float)
        if degree < 0:
            raise ValueError("degree must be non-negative")
        J = np.column_stack([vertices[1] - vertices[0], vertices[2] - vertices[0]])
        det = np.linalg.det(J)
        lengths = [np.linalg.norm(vertices[i] - vertices[j]) for i, j in ((0, 1), (1, 2), (2, 0))]
        if not np.isfinite(det) or abs(det) <= 1e-14 * max(lengths) ** 2:
            raise GeometryError("degenerate triangle")
        self.vertices = vertices
        self.degree = degree
        self.dim = cell_dim(degree)
        self.jacobian = J
        self.inv_jacobian = np.linalg.inv(J)
        self.area = 0.5 * abs(det)
        self.diameter = max(lengths)
        self.scale = 1.0 / np.sqrt(2.0 * self.area)

    def to_reference(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return (x - self.vertices[0]) @ self.inv_jacobian.T

    def from_reference(self, xi):
        xi = np.asarray(xi, dtype=float).reshape(-1, 2)
        return self.vertices[0] + xi @ self.jacobian.T

    def eval(self, x):
        vals, grads = dubiner(self.degree, self.to_reference(x))
        return self.scale * vals, self.scale * grads @ self.inv_jacobian

    def quadrature(self, exactness):
        q = cell_quadrature(exactness)
        return self.from_reference(q.points), q.weights * 2.0 * self.area


class FaceBasis:
    """Orthonormal basis of P^degree on the segment from ``a`` to ``b``."""

    def __init__(self, a, b, degree):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.length = float(np.linalg.norm(self.b - self.a))
        if not np.isfinite(self.length) or self.length <= 0.0:
            raise GeometryError("degenerate face")
        if degree < 0:
            raise ValueError("degree must be non-negative")
        self.degree = degree
        self.dim = degree + 1

    def eval_param(self, s):
        return legendre01(self.degree, s) / np.sqrt(self.length)

    def quadrature(self, exactness):
        q = face_quadrature(exactness)
        pts = self.a + q.points[:, None] * (self.b - self.a)
        return q.points, pts, q.weights * self.length


def orthonormalize_basis(geometry, degree):
    """Basis for a triangle (3x2 array) or a segment (2x2 array)."""
    geometry = np.asarray(geometry, dtype=float)
    if geometry.shape == (3, 2):
        return CellBasis(geometry, degree)
    if geometry.shape == (2, 2):
        return FaceBasis(geometry[0], geometry[1], degree)
    raise GeometryError(f"expected a triangle or a segment, got shape {geometry.shape}")


def gram_matrix(basis, exactness=None):
    if exactness is None:
        exactness = 2 * basis.degree
    if isinstance(basis, CellBasis):
        x, w = basis.quadrature(exactness)
        v, _ = basis.eval(x)
    else:
        s, _, w = basis.quadrature(exactness)
        v = basis.eval_param(s)
    return (v * w[:, None]).T @ v


def l2_project(basis, f, exactness=None):
    """Coefficients of the L2-orthogonal projection of ``f`` onto ``basis``.

    ``f`` takes an (n, 2) array of physical points and returns (n,) values.
    """
    if exactness is None:
        exactness = 2 * basis.degree + 6
    if isinstance(basis, CellBasis):
        x, w = basis.quadrature(exactness)
        v, _ = basis.eval(x)
    else:
        s, x, w = basis.quadrature(exactness)
        v = basis.eval_param(s)
    fx = np.asarray(f(x), dtype=float).reshape(-1)
    return v.T @ (w * fx)


def legendre01_deriv(degree, s):
    """d/ds of :func:`legendre01`; shape (npts, degree+1)."""
    s = np.asarray(s, dtype=float)
    t = 2.0 * s - 1.0
    out = np.empty(s.shape + (degree + 1,))
    for n in range(degree + 1):
        c = np.zeros(n + 1)
        c[n] = 1.0
        out[..., n] = 2.0 * np.sqrt(2.0 * n + 1.0) * np.polynomial.legendre.legval(
            t, np.polynomial.legendre.legder(c)) if n > 0 else 0.0
    return out
