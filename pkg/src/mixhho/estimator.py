"""Local fluxes, residual a posteriori indicators and the energy error."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis_quad import (cell_quadrature, dubiner, face_quadrature, legendre01, legendre01_deriv,
                         singular_cell_quadrature)
from .errors import ProblemSpecError, StructureError
from .hho_local import CellBatch, reference_tables, stabilization_difference
from .mesh import DIRICHLET, INTERIOR, NEUMANN
from .solver import cell_load, face_param_points, project_on_faces


@dataclass(frozen=True)
class CellEstimate:
    eta_res: float
    eta_sta: float
    eta_nor: float
    eta_tan: float
    osc_f: float
    osc_gN: float
    osc_gD: float


@dataclass
class EstimatorReport:
    """Per-cell indicators (arrays of length n_cells) and their aggregates."""

    k: int
    eta_res: np.ndarray
    eta_sta: np.ndarray
    eta_nor: np.ndarray
    eta_tan: np.ndarray
    osc_f: np.ndarray
    osc_gN: np.ndarray
    osc_gD: np.ndarray

    def cell(self, c):
        return CellEstimate(*(float(getattr(self, n)[c]) for n in
                              ("eta_res", "eta_sta", "eta_nor", "eta_tan", "osc_f", "osc_gN", "osc_gD")))

    @property
    def osc_dat(self):
        return self.osc_f + self.osc_gN + self.osc_gD

    def aggregate(self, name):
        return float(np.sqrt(np.sum(getattr(self, name) ** 2)))

    @property
    def aggregates(self):
        return {x: self.aggregate("eta_" + x) for x in ("res", "sta", "nor", "tan")}

    @property
    def osc_total(self):
        return float(np.sqrt(np.sum(self.osc_dat ** 2)))

    @property
    def eta_total(self):
        return total_estimator(self, self.k)

    @property
    def eta_total_with_nor(self):
        """Variant that keeps the normal-jump term for k = 0 (min term otherwise)."""
        return total_estimator(self, self.k, keep_normal_for_k0=True)

    @property
    def contributions(self):
        """Linear percentages 100 eta_X / sum_X eta_X for X in (res, sta, nor, tan)."""
        agg = self.aggregates
        s = sum(agg.values())
        if s == 0.0:
            return {x: 0.0 for x in agg}
        return {x: 100.0 * v / s for x, v in agg.items()}

    def marker(self):
        """Squared per-cell indicator used for marking (oscillations excluded)."""
        return self.eta_res ** 2 + self.eta_sta ** 2 + self.eta_nor ** 2 + self.eta_tan ** 2


def total_estimator(report, k, keep_normal_for_k0=False):
    base = np.sum(report.eta_res ** 2 + report.eta_tan ** 2 + report.eta_sta ** 2 + report.osc_dat ** 2)
    sta2 = np.sum(report.eta_sta ** 2)
    nor2 = np.sum(report.eta_nor ** 2)
    if k == 0 and keep_normal_for_k0:
        extra = nor2
    else:
        extra = min(k * sta2, nor2)
    return float(np.sqrt(base + extra))


# ---------------------------------------------------------------------------
# face traces


def _cell_grad_on_faces(batch, tables, coeffs):
    """Gradients of cell polynomials at face nodes in global face order, (nc, 3, nq, 2)."""
    out = []
    for e in range(3):
        gref = np.einsum("qia,ci->cqa", tables.trace_grad[e], coeffs)
        g = np.einsum("cqa,cab->cqb", gref, batch.Jinv) * batch.scale[:, None, None]
        rev = batch.signs[:, e] < 0
        g[rev] = g[rev, ::-1]
        out.append(g)
    return np.stack(out, axis=1)


def _face_slots(mesh):
    """(nf, 2) local edge index of each face in its first/second cell (-1 if none)."""
    slots = -np.ones((mesh.n_faces, 2), dtype=np.int64)
    c, e = np.nonzero(np.ones_like(mesh.cell_faces, dtype=bool))
    f = mesh.cell_faces[c, e]
    side = np.where(mesh.cell_face_sign[c, e] > 0, 0, 1)
    slots[f, side] = e
    return slots


def stabilization_energy(solution, batch=None):
    """S_dK(u_K, u_K) per cell, summed as squares of Pi(u_F - u_K) to avoid cancellation."""
    batch = CellBatch.from_mesh(solution.mesh) if batch is None else batch
    k = solution.k
    D = stabilization_difference(batch, k, coupling=solution.operators.coupling)
    diff = np.einsum("cefj,cj->cef", D, solution.local_dofs())
    return (k + 1) ** 2 / batch.diam * np.sum(diff ** 2, axis=(1, 2))


def all_fluxes(solution):
    """phi_{K,F} coefficients for every (cell, local edge), (nc, 3, k+1), global face orientation."""
    mesh = solution.mesh
    ops = solution.operators
    k = solution.k
    batch = CellBatch.from_mesh(mesh)
    u = solution.local_dofs()
    r = np.einsum("cij,cj->ci", ops.recon, u)
    D = stabilization_difference(batch, k, coupling=ops.coupling)
    diff = np.einsum("cefj,cj->cef", D, u)                         # Pi(u_F - u_K)
    A = ops.diffusion
    grad_n = np.einsum("ceim,ci->cem", ops.coupling.Nf, r)         # (grad R . n_K, psi_m)
    return -A[:, None, None] * grad_n - (A * (k + 1) ** 2 / batch.diam)[:, None, None] * diff


def numerical_flux(solution, cell, face):
    """phi_{K,F}(u_K) in the orthonormal P^k(F) basis of ``face``."""
    e = solution.mesh.local_face_index(cell, face)
    return all_fluxes(solution)[cell, e]


def conservation_residual(solution, problem):
    """Max flux imbalance over interfaces and Neumann faces, relative to ||A^1/2 grad R||."""
    mesh = solution.mesh
    k = solution.k
    phi = all_fluxes(solution)
    slots = _face_slots(mesh)
    imbalance = np.zeros(mesh.n_faces)
    fi = mesh.interior_faces
    s = phi[mesh.face_cells[fi, 0], slots[fi, 0]] + phi[mesh.face_cells[fi, 1], slots[fi, 1]]
    imbalance[fi] = np.linalg.norm(s, axis=1)
    fn = mesh.neumann_faces
    if len(fn):
        gN = project_on_faces(mesh, fn, problem.neumann, k, with_normals=True)
        imbalance[fn] = np.linalg.norm(phi[mesh.face_cells[fn, 0], slots[fn, 0]] + gN, axis=1)
    ops = solution.operators
    r = np.einsum("cij,cj->ci", ops.recon, solution.local_dofs())
    energy = np.sqrt(np.sum(ops.diffusion * np.einsum("ci,cij,cj->c", r, ops.stiffness, r)))
    if energy == 0.0:
        return float(imbalance.max(initial=0.0))
    return float(imbalance.max(initial=0.0) / energy)


def _tangential_derivative(problem, grad, pts, tangents):
    if grad is not None:
        return np.einsum("qa,qa->q", np.asarray(grad(pts), float).reshape(-1, 2), tangents)
    g = problem.dirichlet
    h = 1e-6
    return (np.asarray(g(pts + h * tangents)) - np.asarray(g(pts - h * tangents))) / (2 * h)


def estimate(solution, problem, k=None):
    """Residual indicators and data oscillations for every cell."""
    mesh = solution.mesh
    k = solution.k if k is None else k
    if k != solution.k:
        raise StructureError("estimator degree does not match the solution")
    ops = solution.operators
    tables = reference_tables(k)
    batch = CellBatch.from_mesh(mesh)
    nc = mesh.n_cells
    A = ops.diffusion
    h = batch.diam
    hk = h / (k + 1)
    u = solution.local_dofs()
    uT = solution.cell_coeffs
    r = np.einsum("cij,cj->ci", ops.recon, u)

    # residual: Pi^{k+1} f + A Lap R, exact in the orthonormal cell basis
    Dp = batch.diff_matrices(tables)
    lap = np.einsum("cij,cjl,cl->ci", Dp[:, 0], Dp[:, 0], r) + np.einsum("cij,cjl,cl->ci", Dp[:, 1], Dp[:, 1], r)
    fproj = cell_load(batch, problem.load, k)
    eta_res = A ** -0.5 * hk * np.linalg.norm(fproj + A[:, None] * lap, axis=1)

    # O_K(f) = A^-1/2 h/(k+1) ||f - Pi f||
    q = cell_quadrature(2 * (k + 1) + 6)
    vals = dubiner(k + 1, q.points, derivatives=False)
    X = batch.to_physical(np.asarray(q.points))
    fx = np.asarray(problem.load(X.reshape(-1, 2)), float).reshape(X.shape[:2])
    pf = np.einsum("qi,ci->cq", vals, fproj) * batch.scale[:, None]
    osc_f = A ** -0.5 * hk * np.sqrt(np.einsum("cq,q->c", (fx - pf) ** 2, q.weights) * batch.det)

    eta_sta = np.sqrt(A * stabilization_energy(solution, batch))

    # face terms, evaluated at face nodes in global orientation
    w = tables.w
    gu = _cell_grad_on_faces(batch, tables, uT)
    gR = _cell_grad_on_faces(batch, tables, r) * A[:, None, None, None]
    slots = _face_slots(mesh)
    ell = mesh.face_lengths
    t = mesh.face_tangents
    n = mesh.face_normals

    tan_int = np.zeros(nc)
    nor_int = np.zeros(nc)
    fi = mesh.interior_faces
    if len(fi):
        c0, c1 = mesh.face_cells[fi, 0], mesh.face_cells[fi, 1]
        e0, e1 = slots[fi, 0], slots[fi, 1]
        jt = np.einsum("fqa,fa->fq", gu[c0, e0] - gu[c1, e1], t[fi])
        jn = np.einsum("fqa,fa->fq", gR[c0, e0] - gR[c1, e1], n[fi])
        jt2 = ell[fi] * (jt ** 2 @ w) * np.minimum(A[c0], A[c1])
        jn2 = ell[fi] * (jn ** 2 @ w)
        np.add.at(tan_int, c0, jt2)
        np.add.at(tan_int, c1, jt2)
        np.add.at(nor_int, c0, jn2)
        np.add.at(nor_int, c1, jn2)

    tan_dir = np.zeros(nc)
    osc_gD = np.zeros(nc)
    fd = mesh.dirichlet_faces
    if len(fd):
        c = mesh.face_cells[fd, 0]
        e = slots[fd, 0]
        pD = project_on_faces(mesh, fd, problem.dirichlet, k + 1, exactness=2 * k + 10)
        dleg = legendre01_deriv(k + 1, tables.s)
        dpi = np.einsum("fm,qm->fq", pD, dleg) / (np.sqrt(ell[fd]) * ell[fd])[:, None]
        du = np.einsum("fqa,fa->fq", gu[c, e], t[fd])
        np.add.at(tan_dir, c, A[c] * ell[fd] * ((du - dpi) ** 2 @ w))
        # O_K(g_D): tangential derivative of g_D - Pi^{k+1} g_D
        fq = face_quadrature(2 * k + 8)
        pts = face_param_points(mesh, fd, fq.points)
        tq = np.repeat(t[fd], len(fq.points), axis=0)
        dg = _tangential_derivative(problem, problem.dirichlet_gradient(), pts.reshape(-1, 2), tq)
        dg = dg.reshape(len(fd), -1)
        dpi_h = np.einsum("fm,qm->fq", pD, legendre01_deriv(k + 1, fq.points)) / (np.sqrt(ell[fd]) * ell[fd])[:, None]
        np.add.at(osc_gD, c, ell[fd] * ((dg - dpi_h) ** 2 @ fq.weights))
        osc_gD = np.sqrt(A * hk * osc_gD)

    nor_neu = np.zeros(nc)
    osc_gN = np.zeros(nc)
    fn = mesh.neumann_faces
    if len(fn):
        c = mesh.face_cells[fn, 0]
        e = slots[fn, 0]
        pN = project_on_faces(mesh, fn, problem.neumann, k, with_normals=True)
        leg = legendre01(k, tables.s)
        pn_vals = np.einsum("fm,qm->fq", pN, leg) / np.sqrt(ell[fn])[:, None]
        flux = np.einsum("fqa,fa->fq", gR[c, e], n[fn])
        np.add.at(nor_neu, c, ell[fn] * ((flux - pn_vals) ** 2 @ w))
        fq = face_quadrature(2 * k + 8)
        pts = face_param_points(mesh, fn, fq.points).reshape(-1, 2)
        nq = np.repeat(n[fn], len(fq.points), axis=0)
        gN = np.asarray(problem.neumann(pts, nq), float).reshape(len(fn), -1)
        pnh = np.einsum("fm,qm->fq", pN, legendre01(k, fq.points)) / np.sqrt(ell[fn])[:, None]
        np.add.at(osc_gN, c, ell[fn] * ((gN - pnh) ** 2 @ fq.weights))
        osc_gN = A ** -0.5 * np.sqrt(hk * osc_gN)

    eta_tan = np.sqrt(hk) * (np.sqrt(tan_int) + np.sqrt(tan_dir))
    eta_nor = A ** -0.5 * np.sqrt(hk) * (np.sqrt(nor_int) + np.sqrt(nor_neu))
    return EstimatorReport(k, eta_res, eta_sta, eta_nor, eta_tan, osc_f, osc_gN, osc_gD)


def energy_error(solution, problem, bump=6, per_cell=False):
    """sqrt(sum_K A_K (||grad(u - u_K)||_K^2 + S_K(u_K, u_K))).

    Cells touching ``problem.singular_point`` use a graded Duffy rule.
    """
    if not problem.has_exact:
        raise ProblemSpecError("energy error needs an exact solution and its gradient")
    mesh = solution.mesh
    k = solution.k
    ops = solution.operators
    batch = CellBatch.from_mesh(mesh)
    A = ops.diffusion
    exactness = 2 * (k + 1) + bump
    q = cell_quadrature(exactness)
    _, gref = dubiner(k + 1, q.points)
    X = batch.to_physical(np.asarray(q.points))
    gexact = np.asarray(problem.exact_grad(X.reshape(-1, 2)), float).reshape(X.shape)
    gh = np.einsum("qia,ci->cqa", gref, solution.cell_coeffs)
    gh = np.einsum("cqa,cab->cqb", gh, batch.Jinv) * batch.scale[:, None, None]
    err2 = batch.det * np.einsum("cqa,q->c", (gexact - gh) ** 2, q.weights)

    if problem.singular_point is not None:
        sp_ = np.asarray(problem.singular_point, float)
        P = mesh.vertices[mesh.cells]
        scale = np.maximum(batch.diam, 1e-300)
        hit = np.linalg.norm(P - sp_, axis=2) <= 1e-12 * scale[:, None]
        for c in np.flatnonzero(hit.any(axis=1)):
            v = int(np.argmax(hit[c]))
            pts, wts = singular_cell_quadrature(P[c], v, exactness + 2)
            xi = (pts - P[c, 0]) @ batch.Jinv[c].T
            _, g = dubiner(k + 1, xi)
            g = np.einsum("qia,i->qa", g, solution.cell_coeffs[c]) @ batch.Jinv[c] * batch.scale[c]
            ge = np.asarray(problem.exact_grad(pts), float).reshape(-1, 2)
            err2[c] = np.sum(wts * np.sum((ge - g) ** 2, axis=1))

    local = A * (err2 + stabilization_energy(solution, batch))
    if per_cell:
        return local
    return float(np.sqrt(np.sum(local)))
