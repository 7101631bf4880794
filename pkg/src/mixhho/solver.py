"""Global assembly, static condensation, linear solve and cell recovery."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis_quad import cell_quadrature, dubiner, face_quadrature, legendre01
from .errors import OracleError, ProblemSpecError, SolverError, StructureError, WellPosednessError
from .hho_local import CellBatch, build_local_system, reference_tables
from .mesh import DIRICHLET, INTERIOR, NEUMANN

DIRECT_SOLVER_LIMIT = 200_000
ORACLE_LIMIT = 6000


@dataclass
class ProblemSpec:
    """Diffusion problem -div(A grad u) = f with mixed boundary conditions.

    Callables take an (n, 2) array of points.  ``neumann`` additionally takes
    the (n, 2) outward normals.  ``exact_grad`` returns (n, 2).
    """

    diffusion: dict
    load: Callable
    dirichlet: Optional[Callable] = None
    neumann: Optional[Callable] = None
    exact: Optional[Callable] = None
    exact_grad: Optional[Callable] = None
    dirichlet_grad: Optional[Callable] = None
    singular_point: Optional[tuple] = None
    name: str = "custom"

    def __post_init__(self):
        for region, a in self.diffusion.items():
            if not (np.isfinite(a) and a > 0):
                raise ProblemSpecError(f"diffusion of region {region} must be positive, got {a}")

    def cell_diffusion(self, mesh):
        try:
            return np.array([self.diffusion[int(r)] for r in mesh.regions], dtype=float)
        except KeyError as exc:
            raise ProblemSpecError(f"no diffusion value for region {exc.args[0]}") from None

    @property
    def has_exact(self):
        return self.exact is not None and self.exact_grad is not None

    def dirichlet_gradient(self):
        return self.dirichlet_grad if self.dirichlet_grad is not None else self.exact_grad


@dataclass
class DofMap:
    k: int
    free_faces: np.ndarray      # sorted face ids carrying unknowns
    face_offset: np.ndarray     # (nf,) first global dof of each face, -1 on Dirichlet faces
    dirichlet: np.ndarray       # (nf,) bool

    @property
    def n_free(self):
        return len(self.free_faces) * (self.k + 1)

    @property
    def n_interior_face_dofs(self):
        return int(np.sum(~self.dirichlet & (self._kinds == INTERIOR))) * (self.k + 1)

    _kinds: np.ndarray = field(default=None, repr=False)


def build_dof_map(mesh, k):
    if k < 0:
        raise ValueError("k must be non-negative")
    dirichlet = mesh.face_kind == DIRICHLET
    if not dirichlet.any():
        raise WellPosednessError("mesh has no Dirichlet face; the problem is singular")
    free = np.flatnonzero(~dirichlet)
    offset = -np.ones(mesh.n_faces, dtype=np.int64)
    offset[free] = np.arange(len(free)) * (k + 1)
    return DofMap(k, free, offset, dirichlet, _kinds=mesh.face_kind)


@dataclass
class HhoSolution:
    k: int
    cell_coeffs: np.ndarray     # (nc, dim P^{k+1}) in the orthonormal cell bases
    face_coeffs: np.ndarray     # (nf, k+1) in the orthonormal face bases
    mesh: object = field(repr=False, default=None)
    operators: object = field(repr=False, default=None)

    def local_dofs(self):
        """Local unknown vectors (nc, nloc) in hho_local ordering."""
        mesh = self.mesh
        faces = self.face_coeffs[mesh.cell_faces].reshape(mesh.n_cells, -1)
        return np.hstack([self.cell_coeffs, faces])

    def evaluate(self, points, cell):
        """Value of the cell component u_K at physical points of cell ``cell``."""
        batch = CellBatch(self.mesh.vertices[self.mesh.cells[[cell]]])
        xi = (np.asarray(points, float).reshape(-1, 2) - batch.vertices[0, 0]) @ batch.Jinv[0].T
        return batch.scale[0] * dubiner(self.k + 1, xi, derivatives=False) @ self.cell_coeffs[cell]


def face_param_points(mesh, faces, s):
    a = mesh.vertices[mesh.faces[faces, 0]]
    b = mesh.vertices[mesh.faces[faces, 1]]
    return a[:, None, :] + np.asarray(s)[None, :, None] * (b - a)[:, None, :]


def project_on_faces(mesh, faces, g, k, exactness=None, with_normals=False):
    """Pi_F^k(g) on the given faces in the global face orientation, (len(faces), k+1)."""
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return np.zeros((0, k + 1))
    fq = face_quadrature(2 * k + 6 if exactness is None else exactness)
    X = face_param_points(mesh, faces, fq.points)
    pts = X.reshape(-1, 2)
    if with_normals:
        nrm = np.repeat(mesh.face_normals[faces], len(fq.points), axis=0)
        gx = g(pts, nrm)
    else:
        gx = g(pts)
    gx = np.asarray(gx, dtype=float).reshape(X.shape[:2])
    leg = legendre01(k, fq.points)
    ell = mesh.face_lengths[faces]
    return np.sqrt(ell)[:, None] * np.einsum("fq,q,qm->fm", gx, fq.weights, leg)


def cell_load(batch, f, k, exactness=None):
    """(f, phi_i)_K for the degree-(k+1) cell bases, (nc, nT)."""
    q = cell_quadrature(2 * (k + 1) + 6 if exactness is None else exactness)
    vals = dubiner(k + 1, q.points, derivatives=False)
    X = batch.to_physical(np.asarray(q.points))
    fx = np.asarray(f(X.reshape(-1, 2)), dtype=float).reshape(X.shape[:2])
    return (batch.det * batch.scale)[:, None] * np.einsum("cq,q,qi->ci", fx, q.weights, vals)


@dataclass
class RecoveryData:
    operators: object
    cell_rhs: np.ndarray         # (nc, nT) = (f, phi_i)_K
    cell_particular: np.ndarray  # TT^{-1} cell_rhs
    dirichlet_values: np.ndarray  # (nf, k+1), zero off Dirichlet faces
    dofmap: DofMap
    neumann_rhs: np.ndarray      # (nf, k+1)


def _local_face_indices(mesh, k):
    nF = k + 1
    return (mesh.cell_faces[:, :, None] * nF + np.arange(nF)[None, None, :]).reshape(mesh.n_cells, -1)


def assemble(mesh, problem, k):
    """Condensed face system.

    Returns ``(matrix, rhs, recovery)`` where ``matrix`` acts on the free
    face unknowns only (Dirichlet faces eliminated, their values moved to
    the right-hand side).
    """
    dofmap = build_dof_map(mesh, k)
    A = problem.cell_diffusion(mesh)
    batch = CellBatch.from_mesh(mesh)
    ops = build_local_system(batch, k, A)
    nF = k + 1
    nT = ops.n_cell_dofs
    bT = cell_load(batch, problem.load, k)
    part = np.linalg.solve(ops.TT, bT[:, :, None])[:, :, 0]
    Sc = ops.condensed()
    FT = ops.aK[:, nT:, :nT]
    gc = -np.einsum("cij,cj->ci", FT, part)

    nfull = mesh.n_faces * nF
    loc = _local_face_indices(mesh, k)
    rows = np.repeat(loc, loc.shape[1], axis=1).ravel()
    cols = np.tile(loc, (1, loc.shape[1])).ravel()
    K = sp.csr_matrix((Sc.ravel(), (rows, cols)), shape=(nfull, nfull))
    rhs_full = np.zeros(nfull)
    np.add.at(rhs_full, loc.ravel(), gc.ravel())

    neumann_rhs = np.zeros((mesh.n_faces, nF))
    nfaces = mesh.neumann_faces
    if len(nfaces):
        if problem.neumann is None:
            raise ProblemSpecError("mesh has Neumann faces but the problem has no Neumann datum")
        neumann_rhs[nfaces] = project_on_faces(mesh, nfaces, problem.neumann, k, with_normals=True)
    rhs_full += neumann_rhs.ravel()

    dvals = np.zeros((mesh.n_faces, nF))
    dfaces = mesh.dirichlet_faces
    if problem.dirichlet is None:
        raise ProblemSpecError("problem has no Dirichlet datum")
    dvals[dfaces] = project_on_faces(mesh, dfaces, problem.dirichlet, k)

    free = (dofmap.free_faces[:, None] * nF + np.arange(nF)).ravel()
    fixed = (dfaces[:, None] * nF + np.arange(nF)).ravel()
    Kff = K[free][:, free]
    Kfd = K[free][:, fixed]
    rhs = rhs_full[free] - Kfd @ dvals[dfaces].ravel()
    Kff = 0.5 * (Kff + Kff.T)
    rec = RecoveryData(ops, bT, part, dvals, dofmap, neumann_rhs)
    return Kff.tocsr(), rhs, rec


def solve_linear(matrix, rhs, tol=1e-12, maxiter=None):
    """Solve an SPD system to normwise backward error ``tol``.

    Symmetric Jacobi scaling, then a sparse LU with diagonal pivoting (plus
    iterative refinement) up to ``DIRECT_SOLVER_LIMIT`` unknowns, and
    diagonally preconditioned CG above.  The backward error
    ``|b - A x| / (|A| |x| + |b|)`` is measured on the scaled system so that
    graded meshes with tiny cells do not trigger spurious failures.
    """
    A = sp.csr_matrix(matrix)
    b = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    if np.linalg.norm(b) == 0.0:
        return np.zeros(n)
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix is not positive definite (non-positive diagonal)")
    s = 1.0 / np.sqrt(d)
    As = (sp.diags(s) @ A @ sp.diags(s)).tocsr()
    bs = s * b
    anorm = spla.norm(As, np.inf)

    def backward_error(y):
        return np.linalg.norm(bs - As @ y, np.inf) / (anorm * np.linalg.norm(y, np.inf) + np.linalg.norm(bs, np.inf))

    if n <= DIRECT_SOLVER_LIMIT:
        lu = spla.splu(As.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
        y = lu.solve(bs)
        for _ in range(4):
            if backward_error(y) <= tol:
                return s * y
            y = y + lu.solve(bs - As @ y)
    else:
        y, _ = spla.cg(As, bs, rtol=0.1 * tol, atol=0.0, maxiter=maxiter or 20 * n)
    res = backward_error(y)
    if res > tol:
        raise SolverError(f"linear solve reached backward error {res:.3e} > {tol:.1e}", residual=res)
    return s * y


def recover_solution(face_values, recovery, mesh, k):
    """Back-substitute cell unknowns from the free face unknowns."""
    nF = k + 1
    dofmap = recovery.dofmap
    face_values = np.asarray(face_values, dtype=float)
    if face_values.shape != (dofmap.n_free,):
        raise StructureError(f"expected {dofmap.n_free} face values, got {face_values.shape}")
    faces = recovery.dirichlet_values.copy()
    faces[dofmap.free_faces] = face_values.reshape(-1, nF)
    uF = faces[mesh.cell_faces].reshape(mesh.n_cells, -1)
    ops = recovery.operators
    uT = recovery.cell_particular - np.einsum("cij,cj->ci", ops.TT_inv_TF, uF)
    return HhoSolution(k, uT, faces, mesh, ops)


def solve_problem(mesh, problem, k, tol=1e-12):
    matrix, rhs, rec = assemble(mesh, problem, k)
    x = solve_linear(matrix, rhs, tol)
    return recover_solution(x, rec, mesh, k)


def galerkin_residual(solution, problem):
    """a_h(u_h, w) - l_h(w) for every non-Dirichlet basis test function.

    Returns ``(cell_residual (nc, nT), face_residual (n_free_faces, k+1))``.
    """
    mesh = solution.mesh
    ops = solution.operators
    k = solution.k
    nT = ops.n_cell_dofs
    nF = k + 1
    batch = CellBatch.from_mesh(mesh)
    u = solution.local_dofs()
    Au = np.einsum("cij,cj->ci", ops.aK, u)
    cell_res = Au[:, :nT] - cell_load(batch, problem.load, k)
    face_res = np.zeros((mesh.n_faces, nF))
    np.add.at(face_res, mesh.cell_faces, Au[:, nT:].reshape(mesh.n_cells, 3, nF))
    nf = mesh.neumann_faces
    if len(nf):
        face_res[nf] -= project_on_faces(mesh, nf, problem.neumann, k, with_normals=True)
    free = mesh.face_kind != DIRICHLET
    return cell_res, face_res[free]


def solve_uncondensed_oracle(mesh, problem, k):
    """Dense solve in all cell and face unknowns (verification oracle)."""
    nF = k + 1
    tables = reference_tables(k)
    nT = tables.n_cell
    ncell_dofs = mesh.n_cells * nT
    ntot = ncell_dofs + mesh.n_faces * nF
    if ntot > ORACLE_LIMIT:
        raise OracleError(f"{ntot} unknowns exceed the dense oracle cap {ORACLE_LIMIT}")
    if not np.any(mesh.face_kind == DIRICHLET):
        raise WellPosednessError("mesh has no Dirichlet face")
    batch = CellBatch.from_mesh(mesh)
    ops = build_local_system(batch, k, problem.cell_diffusion(mesh))
    glob = np.hstack([np.arange(mesh.n_cells)[:, None] * nT + np.arange(nT),
                      ncell_dofs + _local_face_indices(mesh, k)])
    M = np.zeros((ntot, ntot))
    for c in range(mesh.n_cells):
        M[np.ix_(glob[c], glob[c])] += ops.aK[c]
    L = np.zeros(ntot)
    L[:ncell_dofs] = cell_load(batch, problem.load, k).ravel()
    nfc = mesh.neumann_faces
    if len(nfc):
        gN = project_on_faces(mesh, nfc, problem.neumann, k, with_normals=True)
        L[ncell_dofs + (nfc[:, None] * nF + np.arange(nF)).ravel()] += gN.ravel()
    df = mesh.dirichlet_faces
    fixed = ncell_dofs + (df[:, None] * nF + np.arange(nF)).ravel()
    ufix = project_on_faces(mesh, df, problem.dirichlet, k).ravel()
    free = np.setdiff1d(np.arange(ntot), fixed)
    rhs = L[free] - M[np.ix_(free, fixed)] @ ufix
    x = sla.solve(M[np.ix_(free, free)], rhs, assume_a="pos")
    full = np.zeros(ntot)
    full[free] = x
    full[fixed] = ufix
    return HhoSolution(k, full[:ncell_dofs].reshape(mesh.n_cells, nT),
                       full[ncell_dofs:].reshape(mesh.n_faces, nF), mesh, ops)
