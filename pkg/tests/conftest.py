import numpy as np
import pytest

from mixhho.mesh import build_connectivity, generate_structured_mesh
from mixhho.solver import ProblemSpec

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def polynomial_problem(coeffs, diffusion=1.0):
    """u = sum c_ab x^a y^b with f = -A lap u; coeffs maps (a, b) -> c."""
    def u(x):
        x = np.asarray(x, float).reshape(-1, 2)
        return sum(c * x[:, 0] ** a * x[:, 1] ** b for (a, b), c in coeffs.items())

    def grad(x):
        x = np.asarray(x, float).reshape(-1, 2)
        gx = sum(c * a * x[:, 0] ** max(a - 1, 0) * x[:, 1] ** b for (a, b), c in coeffs.items() if a)
        gy = sum(c * b * x[:, 0] ** a * x[:, 1] ** max(b - 1, 0) for (a, b), c in coeffs.items() if b)
        z = np.zeros(len(x))
        return np.column_stack([z + gx, z + gy])

    def f(x):
        x = np.asarray(x, float).reshape(-1, 2)
        lap = np.zeros(len(x))
        for (a, b), c in coeffs.items():
            if a >= 2:
                lap += c * a * (a - 1) * x[:, 0] ** (a - 2) * x[:, 1] ** b
            if b >= 2:
                lap += c * b * (b - 1) * x[:, 0] ** a * x[:, 1] ** (b - 2)
        return -diffusion * lap

    return ProblemSpec({0: diffusion}, f, u, None, u, grad, name="poly")


def harmonic_poly(k):
    """Real part of (x + i y)^(k+1) plus lower-order terms: a degree-(k+1) polynomial."""
    n = k + 1
    coeffs = {(0, 0): 0.3, (1, 0): -0.7, (0, 1): 0.4}
    from math import comb
    for j in range(0, n + 1, 2):
        coeffs[(n - j, j)] = coeffs.get((n - j, j), 0.0) + comb(n, j) * (-1) ** (j // 2)
    if n >= 2:
        coeffs[(2, 0)] = coeffs.get((2, 0), 0.0) + 0.5   # non-harmonic part, f != 0
        coeffs[(1, 1)] = coeffs.get((1, 1), 0.0) - 0.25
    return coeffs


@pytest.fixture
def square32():
    return generate_structured_mesh("square", 4)


@pytest.fixture
def two_cell():
    return build_connectivity([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]], "D")


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[num])
