"""Cellwise HHO operators: reconstruction, stabilization, local bilinear form.

Everything is batched over cells: arrays carry a leading cell axis.  Local
unknowns of a cell are ordered ``[cell coeffs (dim P^{k+1}), face 0, face 1,
face 2]`` where face block ``e`` belongs to local edge ``e`` (opposite local
vertex ``e``) and holds k+1 coefficients in the orthonormal Legendre basis
of that face, parametrised in the face's global direction.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis_quad import (cell_dim, cell_quadrature, dubiner, face_quadrature, legendre01,
                         reference_diff_matrices, reference_edge_points)
from .errors import GeometryError, HHOError


@dataclass(frozen=True)
class ReferenceTables:
    """Reference-element tables for mixed order (k+1 in cells, k on faces)."""

    k: int
    n_cell: int
    n_face: int
    Dx: np.ndarray           # differentiation matrices of P^{k+1}
    Dy: np.ndarray
    stiff_ab: np.ndarray     # (2, 2, n_cell, n_cell): int d_a phi_i d_b phi_j
    s: np.ndarray            # face quadrature nodes on [0, 1]
    w: np.ndarray
    trace: np.ndarray        # (3, nq, n_cell) cell basis on local edge e
    trace_grad: np.ndarray   # (3, nq, n_cell, 2) reference gradients on edge e
    leg: np.ndarray          # (nq, n_face)
    cell_pts: np.ndarray     # cell quadrature (exactness 2(k+1))
    cell_w: np.ndarray
    cell_vals: np.ndarray


@lru_cache(maxsize=None)
def reference_tables(k, face_exactness=None):
    if k < 0:
        raise ValueError("k must be non-negative")
    deg = k + 1
    Dx, Dy = reference_diff_matrices(deg)
    D = (Dx, Dy)
    stiff = np.array([[D[a].T @ D[b] for b in range(2)] for a in range(2)])
    fq = face_quadrature(2 * k + 2 if face_exactness is None else face_exactness)
    trace, tgrad = [], []
    for e in range(3):
        v, g = dubiner(deg, reference_edge_points(e, fq.points))
        trace.append(v)
        tgrad.append(g)
    cq = cell_quadrature(2 * deg)
    return ReferenceTables(
        k=k, n_cell=cell_dim(deg), n_face=k + 1, Dx=Dx, Dy=Dy, stiff_ab=stiff,
        s=np.asarray(fq.points), w=np.asarray(fq.weights), trace=np.array(trace), trace_grad=np.array(tgrad),
        leg=legendre01(k, fq.points), cell_pts=np.asarray(cq.points), cell_w=np.asarray(cq.weights),
        cell_vals=dubiner(deg, cq.points, derivatives=False),
    )


class CellBatch:
    """Affine geometry of a set of triangles.

    ``signs[c, e] = +1`` when local edge ``e`` (from vertex e+1 to e+2) runs
    in the direction of the face parametrisation, ``-1`` otherwise.
    """

    def __init__(self, vertices, signs=None, diameters=None):
        P = np.asarray(vertices, dtype=float).reshape(-1, 3, 2)
        self.vertices = P
        n = len(P)
        self.J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
        det = self.J[:, 0, 0] * self.J[:, 1, 1] - self.J[:, 0, 1] * self.J[:, 1, 0]
        edges = np.stack([P[:, (e + 2) % 3] - P[:, (e + 1) % 3] for e in range(3)], axis=1)
        self.face_lengths = np.linalg.norm(edges, axis=2)
        if np.any(det <= 1e-14 * self.face_lengths.max(axis=1) ** 2):
            raise GeometryError("degenerate or clockwise triangle in cell batch")
        self.det = det
        self.area = 0.5 * det
        self.Jinv = np.linalg.inv(self.J)
        self.G = self.Jinv @ np.transpose(self.Jinv, (0, 2, 1))
        self.diam = self.face_lengths.max(axis=1) if diameters is None else np.asarray(diameters, float)
        t = edges / self.face_lengths[..., None]
        self.normals = np.stack([t[..., 1], -t[..., 0]], axis=2)     # outward, (n, 3, 2)
        self.signs = np.ones((n, 3), dtype=np.int64) if signs is None else np.asarray(signs, dtype=np.int64)
        self.scale = 1.0 / np.sqrt(det)                              # 1/sqrt(2|K|)

    @classmethod
    def from_mesh(cls, mesh):
        return cls(mesh.vertices[mesh.cells], mesh.cell_face_sign, mesh.cell_diameters)

    def __len__(self):
        return len(self.vertices)

    def to_physical(self, xi):
        """Map reference points (nq, 2) to physical points (ncell, nq, 2)."""
        return self.vertices[:, None, 0, :] + np.einsum("cab,qb->cqa", self.J, xi)

    def face_points(self, e, s):
        a = self.vertices[:, (e + 1) % 3]
        b = self.vertices[:, (e + 2) % 3]
        return a[:, None, :] + np.asarray(s)[None, :, None] * (b - a)[:, None, :]

    def oriented_legendre(self, tables_leg, e):
        """Face basis values at local-edge nodes, per cell (ncell, nq, nF)."""
        nF = tables_leg.shape[1]
        par = np.where(self.signs[:, e, None] > 0, 1.0, (-1.0) ** np.arange(nF)[None, :])
        return tables_leg[None, :, :] * par[:, None, :]

    def diff_matrices(self, tables):
        """Physical differentiation matrices (ncell, 2, n, n) in the cell basis."""
        D = np.stack([tables.Dx, tables.Dy])
        return np.einsum("cba,bij->caij", self.Jinv, D)


@dataclass
class FaceCoupling:
    """Per-edge trace integrals (all shaped with a leading cell axis)."""

    Mcf: np.ndarray   # (nc, 3, nT, nF)   (phi_i, psi_m)_F
    Nc: np.ndarray    # (nc, 3, nT, nT)   (grad phi_i . n, phi_j)_F
    Nf: np.ndarray    # (nc, 3, nT, nF)   (grad phi_i . n, psi_m)_F


def face_coupling(batch, tables):
    nc = len(batch)
    nT, nF = tables.n_cell, tables.n_face
    Mcf = np.empty((nc, 3, nT, nF))
    Nc = np.empty((nc, 3, nT, nT))
    Nf = np.empty((nc, 3, nT, nF))
    for e in range(3):
        ell = batch.face_lengths[:, e]
        L = batch.oriented_legendre(tables.leg, e)                 # (nc, nq, nF)
        T = tables.trace[e]                                        # (nq, nT)
        jn = np.einsum("cab,cb->ca", batch.Jinv, batch.normals[:, e])   # Jinv n
        gn = np.einsum("qia,ca->cqi", tables.trace_grad[e], jn)    # (nc, nq, nT)
        cf = ell * batch.scale / np.sqrt(ell)
        cc = ell * batch.scale ** 2
        Tw = T * tables.w[:, None]
        Mcf[:, e] = cf[:, None, None] * np.einsum("qi,cqm->cim", Tw, L)
        Nc[:, e] = cc[:, None, None] * np.einsum("cqi,qj->cij", gn * tables.w[None, :, None], T)
        Nf[:, e] = cf[:, None, None] * np.einsum("cqi,cqm->cim", gn * tables.w[None, :, None], L)
    return FaceCoupling(Mcf, Nc, Nf)


def cell_stiffness(batch, tables):
    return np.einsum("cab,abij->cij", batch.G, tables.stiff_ab)


def _n_local(tables):
    return tables.n_cell + 3 * tables.n_face


def build_reconstruction(batch, k, tables=None, coupling=None, stiffness=None):
    """Matrices (ncell, nT, nloc) mapping local unknowns to R_K^{k+1} coefficients."""
    tables = tables or reference_tables(k)
    coupling = coupling or face_coupling(batch, tables)
    stiff = cell_stiffness(batch, tables) if stiffness is None else stiffness
    nT, nF = tables.n_cell, tables.n_face
    nc = len(batch)
    B = np.zeros((nc, nT, _n_local(tables)))
    B[:, :, :nT] = stiff - coupling.Nc.sum(axis=1)
    for e in range(3):
        B[:, :, nT + e * nF:nT + (e + 1) * nF] = coupling.Nf[:, e]
    R = np.zeros_like(B)
    # the constant mode is fixed by the mean constraint: r_0 = v_0
    R[:, 0, 0] = 1.0
    if nT > 1:
        try:
            R[:, 1:, :] = np.linalg.solve(stiff[:, 1:, 1:], B[:, 1:, :])
        except np.linalg.LinAlgError as exc:
            raise HHOError(f"singular local Neumann problem: {exc}") from exc
    return R


def stabilization_difference(batch, k, tables=None, coupling=None):
    """Maps D_e (ncell, 3, nF, nloc): local unknowns -> Pi_F^k(v_F - v_K|F) coefficients."""
    tables = tables or reference_tables(k)
    coupling = coupling or face_coupling(batch, tables)
    nT, nF = tables.n_cell, tables.n_face
    D = np.zeros((len(batch), 3, nF, _n_local(tables)))
    for e in range(3):
        D[:, e, :, :nT] = -np.transpose(coupling.Mcf[:, e], (0, 2, 1))
        D[:, e, :, nT + e * nF:nT + (e + 1) * nF] = np.eye(nF)
    return D


def build_stabilization(batch, k, tables=None, coupling=None):
    """Lehrenfeld-Schoeberl stabilization matrices (ncell, nloc, nloc), assembled as D^T D."""
    D = stabilization_difference(batch, k, tables, coupling)
    Dflat = D.reshape(len(batch), -1, D.shape[-1])
    return ((k + 1) ** 2 / batch.diam)[:, None, None] * np.einsum("cqi,cqj->cij", Dflat, Dflat)


@dataclass
class LocalOperators:
    k: int
    recon: np.ndarray        # (nc, nT, nloc)
    stab: np.ndarray         # (nc, nloc, nloc) without the diffusion factor
    aK: np.ndarray           # (nc, nloc, nloc) = A_K (R^T Stiff R + S)
    stiffness: np.ndarray    # (nc, nT, nT)
    coupling: FaceCoupling
    diffusion: np.ndarray    # (nc,)
    TT: np.ndarray           # cell-cell block of aK
    TT_inv_TF: np.ndarray    # (nc, nT, 3 nF)

    @property
    def n_cell_dofs(self):
        return self.recon.shape[1]

    def condensed(self):
        """Schur complements on the face unknowns (nc, 3nF, 3nF)."""
        nT = self.n_cell_dofs
        FF = self.aK[:, nT:, nT:]
        FT = self.aK[:, nT:, :nT]
        S = FF - FT @ self.TT_inv_TF
        return 0.5 * (S + np.transpose(S, (0, 2, 1)))


def build_local_system(batch, k, diffusion):
    """Local bilinear forms and condensation data for every cell of ``batch``."""
    A = np.broadcast_to(np.asarray(diffusion, dtype=float), (len(batch),)).copy()
    if np.any(~(A > 0)):
        raise ValueError("diffusion coefficient must be positive")
    tables = reference_tables(k)
    coupling = face_coupling(batch, tables)
    stiff = cell_stiffness(batch, tables)
    R = build_reconstruction(batch, k, tables, coupling, stiff)
    S = build_stabilization(batch, k, tables, coupling)
    consist = np.einsum("cti,ctu,cuj->cij", R, stiff, R)
    aK = A[:, None, None] * (consist + S)
    aK = 0.5 * (aK + np.transpose(aK, (0, 2, 1)))
    nT = tables.n_cell
    TT = aK[:, :nT, :nT]
    TT_inv_TF = np.linalg.solve(TT, aK[:, :nT, nT:])
    return LocalOperators(k, R, S, aK, stiff, coupling, A, TT, TT_inv_TF)


def reduce_interpolate(batch, f, k, exactness=None):
    """Local reduction: (Pi_K^{k+1} f, Pi_F^k f on each face), shape (ncell, nloc)."""
    tables = reference_tables(k)
    nT, nF = tables.n_cell, tables.n_face
    q = cell_quadrature(2 * (k + 1) + 6 if exactness is None else exactness)
    vals = dubiner(k + 1, q.points, derivatives=False)
    X = batch.to_physical(np.asarray(q.points))
    fx = np.asarray(f(X.reshape(-1, 2)), dtype=float).reshape(X.shape[:2])
    out = np.zeros((len(batch), nT + 3 * nF))
    # (f, phi_i)_K = 2|K| * scale * sum_q w f phi_hat
    out[:, :nT] = (batch.det * batch.scale)[:, None] * np.einsum("cq,q,qi->ci", fx, q.weights, vals)
    out[:, nT:] = face_projections(batch, f, k, exactness=2 * k + 6 if exactness is None else exactness)
    return out


def face_projections(batch, f, k, exactness=None):
    """Pi_F^k of ``f`` on the three faces of every cell, (ncell, 3 (k+1))."""
    fq = face_quadrature(2 * k + 6 if exactness is None else exactness)
    s = np.asarray(fq.points)
    leg = legendre01(k, s)
    out = []
    for e in range(3):
        X = batch.face_points(e, s)
        fx = np.asarray(f(X.reshape(-1, 2)), dtype=float).reshape(X.shape[:2])
        L = batch.oriented_legendre(leg, e)
        ell = batch.face_lengths[:, e]
        out.append(np.sqrt(ell)[:, None] * np.einsum("cq,q,cqm->cm", fx, fq.weights, L))
    return np.concatenate(out, axis=1)


def local_seminorm(batch, v, k):
    """HHO seminorm |v|^2 = ||grad v_K||^2 + (k+1)^2/h_K ||Pi^k(v_dK - v_K)||^2, per cell (squared)."""
    tables = reference_tables(k)
    stiff = cell_stiffness(batch, tables)
    D = stabilization_difference(batch, k, tables)
    vT = v[:, :tables.n_cell]
    grad2 = np.einsum("ci,cij,cj->c", vT, stiff, vT)
    diff = np.einsum("cefj,cj->cef", D, v)
    return grad2 + (k + 1) ** 2 / batch.diam * np.sum(diff ** 2, axis=(1, 2))
