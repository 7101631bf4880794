import numpy as np
import pytest
import scipy.sparse as sp
from dataclasses import replace

from conftest import harmonic_poly, polynomial_problem
from mixhho.adapt import count_dofs
from mixhho.errors import OracleError, ProblemSpecError, SolverError, StructureError, WellPosednessError
from mixhho.estimator import energy_error
from mixhho.mesh import build_connectivity, generate_structured_mesh
from mixhho.solver import (ProblemSpec, build_dof_map, galerkin_residual, recover_solution, assemble,
                           solve_linear, solve_problem, solve_uncondensed_oracle)


def with_neumann(problem, diffusion=1.0):
    g = problem.exact_grad
    return replace(problem, neumann=lambda x, n: diffusion * np.einsum("qa,qa->q", g(x), n))


def test_dof_counts(square32):
    tri = build_connectivity([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], "D")
    assert count_dofs(tri, 3) == 0
    assert count_dofs(square32, 0) == 40
    assert count_dofs(square32, 1) == 80
    two = build_connectivity([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]], "D")
    assert count_dofs(two, 1) == 2


def test_solve_linear_small_systems():
    assert np.allclose(solve_linear(sp.identity(5), np.arange(5.0)), np.arange(5.0))
    A = sp.csr_matrix([[4.0, 1.0], [1.0, 3.0]])
    assert np.allclose(solve_linear(A, [1.0, 2.0]), [1 / 11, 7 / 11], atol=1e-15)
    assert np.all(solve_linear(A, [0.0, 0.0]) == 0.0)
    with pytest.raises(SolverError):
        solve_linear(sp.csr_matrix([[1.0, 0.0], [0.0, -1.0]]), [1.0, 1.0])


def test_solve_linear_random_spd():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((200, 200))
    A = B @ B.T + 200 * np.eye(200)
    b = rng.standard_normal(200)
    x = solve_linear(sp.csr_matrix(A), b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b) * np.linalg.cond(A)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_polynomial_reproduction(square32, k):
    prob = polynomial_problem(harmonic_poly(k))
    sol = solve_problem(square32, prob, k)
    ref = energy_error(solve_problem(square32, replace(prob, load=lambda x: 0 * x[:, 0] + 1.0), k), prob)
    assert energy_error(sol, prob) <= 1e-9 * max(ref, 1.0)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_condensed_matches_uncondensed(k):
    mesh = generate_structured_mesh("square", 3)
    prob = ProblemSpec({0: 1.0}, lambda x: np.sin(3 * x[:, 0]) * np.exp(x[:, 1]), lambda x: x[:, 0] * x[:, 1])
    a = solve_problem(mesh, prob, k)
    b = solve_uncondensed_oracle(mesh, prob, k)
    scale = max(np.abs(b.cell_coeffs).max(), 1.0)
    assert np.abs(a.cell_coeffs - b.cell_coeffs).max() <= 1e-10 * scale
    assert np.abs(a.face_coeffs - b.face_coeffs).max() <= 1e-10 * scale


def test_mixed_boundary_with_scaled_diffusion():
    # Neumann on x = 1, A = 2.5
    verts = [[0, 0], [1, 0], [1, 1], [0, 1]]
    label = lambda mid: np.where(np.isclose(mid[:, 0], 1.0), "N", "D")  # noqa: E731
    mesh = build_connectivity(verts, [[0, 1, 2], [0, 2, 3]], label)
    prob = with_neumann(polynomial_problem({(2, 0): 1.0, (0, 1): 0.5, (1, 1): -1.0}, 2.5), 2.5)
    sol = solve_problem(mesh, prob, 1)
    assert energy_error(sol, prob) <= 1e-10
    cell_res, face_res = galerkin_residual(sol, prob)
    assert np.abs(cell_res).max() <= 1e-11 and np.abs(face_res).max() <= 1e-11


def test_piecewise_diffusion_oracle():
    mesh = generate_structured_mesh("kellogg_square", 4)
    prob = ProblemSpec({0: 1.0, 1: 50.0}, lambda x: np.ones(len(x)), lambda x: np.zeros(len(x)))
    a = solve_problem(mesh, prob, 1)
    b = solve_uncondensed_oracle(mesh, prob, 1)
    assert np.allclose(a.face_coeffs, b.face_coeffs, atol=1e-11 * np.abs(b.face_coeffs).max())


def test_zero_data_gives_zero_solution(square32):
    prob = ProblemSpec({0: 1.0}, lambda x: np.zeros(len(x)), lambda x: np.zeros(len(x)))
    sol = solve_problem(square32, prob, 2)
    assert np.all(sol.cell_coeffs == 0.0) and np.all(sol.face_coeffs == 0.0)


def test_errors(square32):
    allneu = generate_structured_mesh("square", 2, boundary_labels="N")
    prob = ProblemSpec({0: 1.0}, lambda x: np.ones(len(x)), None, lambda x, n: np.zeros(len(x)))
    with pytest.raises(WellPosednessError):
        solve_problem(allneu, prob, 1)
    with pytest.raises(WellPosednessError):
        solve_uncondensed_oracle(allneu, prob, 1)
    with pytest.raises(ProblemSpecError):
        ProblemSpec({0: -1.0}, lambda x: x[:, 0])
    with pytest.raises(ProblemSpecError):
        ProblemSpec({5: 1.0}, lambda x: x[:, 0]).cell_diffusion(square32)
    with pytest.raises(OracleError):
        solve_uncondensed_oracle(generate_structured_mesh("square", 40), prob, 2)
    with pytest.raises(ValueError):
        build_dof_map(square32, -1)
    _, _, rec = assemble(square32, ProblemSpec({0: 1.0}, lambda x: x[:, 0], lambda x: x[:, 1]), 1)
    with pytest.raises(StructureError):
        recover_solution(np.zeros(3), rec, square32, 1)
