"""Built-in benchmark problems and the ``key = value`` problem-file reader."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ProblemSpecError
from .mesh import generate_structured_mesh, read_mesh
from .solver import ProblemSpec

KELLOGG_ALPHA = 0.1
KELLOGG_B = 161.4476387975881
BUILTIN_CASES = ("ex1_sine", "ex2_lshape", "ex3_kellogg")
_ALIASES = {"ex1": "ex1_sine", "ex2": "ex2_lshape", "ex3": "ex3_kellogg"}


def _polar(x):
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    r = np.hypot(x[:, 0], x[:, 1])
    th = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2.0 * np.pi)
    return r, th


def _polar_gradient(r, th, dr, dth):
    """Cartesian gradient from d/dr and (1/r) d/dtheta components."""
    c, s = np.cos(th), np.sin(th)
    return np.column_stack([dr * c - dth * s, dr * s + dth * c])


# ---------------------------------------------------------------------------
# Example 1: smooth solution on the square


def ex1_sine():
    pi = np.pi

    def exact(x):
        return np.sin(pi * x[:, 0]) * np.sin(pi * x[:, 1])

    def grad(x):
        return pi * np.column_stack([np.cos(pi * x[:, 0]) * np.sin(pi * x[:, 1]),
                                     np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1])])

    def load(x):
        return 2.0 * pi ** 2 * exact(x)

    problem = ProblemSpec({0: 1.0}, load, exact, None, exact, grad, name="ex1_sine")
    return problem, generate_structured_mesh("square", 4)


# ---------------------------------------------------------------------------
# Example 2: L-shaped domain with a reentrant corner


def ex2_lshape():
    def exact(x):
        r, th = _polar(x)
        return r ** (2.0 / 3.0) * np.sin(2.0 * th / 3.0)

    def grad(x):
        r, th = _polar(x)
        with np.errstate(divide="ignore"):
            m = (2.0 / 3.0) * r ** (-1.0 / 3.0)
        return _polar_gradient(r, th, m * np.sin(2.0 * th / 3.0), m * np.cos(2.0 * th / 3.0))

    def load(x):
        return np.zeros(len(np.asarray(x).reshape(-1, 2)))

    problem = ProblemSpec({0: 1.0}, load, exact, None, exact, grad, singular_point=(0.0, 0.0),
                          name="ex2_lshape")
    return problem, generate_structured_mesh("lshape", 4)


# ---------------------------------------------------------------------------
# Example 3: checkerboard coefficient


def _quadrant_coefficients(b):
    # quadrants 0..3 counterclockwise from the positive x axis; xy >= 0 in 0 and 2
    return np.array([b, 1.0, b, 1.0])


def kellogg_transmission_matrix(alpha, b):
    """8x8 system for phi_i = a_i cos(alpha t) + c_i sin(alpha t) on quadrant i.

    Rows impose continuity of phi and of A phi' at t = pi/2, pi, 3pi/2 and
    between t = 2 pi (quadrant 3) and t = 0 (quadrant 0).
    """
    A = _quadrant_coefficients(b)
    M = np.zeros((8, 8))

    def val(t):
        return np.array([math.cos(alpha * t), math.sin(alpha * t)])

    def der(t):
        return alpha * np.array([-math.sin(alpha * t), math.cos(alpha * t)])

    for j in range(4):
        left, right = j, (j + 1) % 4
        tl = (j + 1) * np.pi / 2
        tr = tl if right else 0.0
        M[2 * j, 2 * left:2 * left + 2] = val(tl)
        M[2 * j, 2 * right:2 * right + 2] -= val(tr)
        M[2 * j + 1, 2 * left:2 * left + 2] = A[left] * der(tl)
        M[2 * j + 1, 2 * right:2 * right + 2] -= A[right] * der(tr)
    return M


def _reference_profile(theta, alpha, b):
    """Closed-form angular profile in the classical (rho, sigma) parametrisation."""
    g = alpha
    rho = np.pi / 4
    sigma = math.atan(-b * math.tan(rho * g)) / g
    th = np.asarray(theta, float)
    q = np.minimum((th // (np.pi / 2)).astype(int), 3)
    out = np.empty_like(th)
    out[q == 0] = math.cos((np.pi / 2 - sigma) * g) * np.cos((th[q == 0] - np.pi / 2 + rho) * g)
    out[q == 1] = math.cos(rho * g) * np.cos((th[q == 1] - np.pi + sigma) * g)
    out[q == 2] = math.cos(sigma * g) * np.cos((th[q == 2] - np.pi - rho) * g)
    out[q == 3] = math.cos((np.pi / 2 - rho) * g) * np.cos((th[q == 3] - 3 * np.pi / 2 - sigma) * g)
    return out


@dataclass(frozen=True)
class KelloggProfile:
    alpha: float
    b: float
    coeffs: np.ndarray        # (4, 2): phi_i = c0 cos(alpha t) + c1 sin(alpha t)
    residual: float           # relative transmission residual of the coefficients

    def phi(self, theta):
        th = np.asarray(theta, float)
        q = np.minimum((th // (np.pi / 2)).astype(int), 3)
        c = self.coeffs[q]
        return c[:, 0] * np.cos(self.alpha * th) + c[:, 1] * np.sin(self.alpha * th)

    def dphi(self, theta):
        th = np.asarray(theta, float)
        q = np.minimum((th // (np.pi / 2)).astype(int), 3)
        c = self.coeffs[q]
        return self.alpha * (-c[:, 0] * np.sin(self.alpha * th) + c[:, 1] * np.cos(self.alpha * th))

    def transmission_residual(self, n_samples=100, seed=0):
        """Largest relative jump of u and of A du/dn across the axes.

        Sampled at ``n_samples`` random radii in (0, 1] on each half-axis.
        """
        rng = np.random.default_rng(seed)
        r = rng.uniform(1e-3, 1.0, n_samples)
        A = _quadrant_coefficients(self.b)
        ang = np.linspace(0.0, 2 * np.pi, 401)[:-1]
        u_scale = np.abs(self.phi(ang)).max()
        f_scale = np.abs(A[np.minimum((ang // (np.pi / 2)).astype(int), 3)] * self.dphi(ang)).max()
        worst = 0.0
        for j in range(4):
            left, right = j, (j + 1) % 4
            t = (j + 1) * np.pi / 2
            tr = t if right else 0.0
            cl, cr = self.coeffs[left], self.coeffs[right]
            cs_l = np.array([math.cos(self.alpha * t), math.sin(self.alpha * t)])
            cs_r = np.array([math.cos(self.alpha * tr), math.sin(self.alpha * tr)])
            ds_l = self.alpha * np.array([-cs_l[1], cs_l[0]])
            ds_r = self.alpha * np.array([-cs_r[1], cs_r[0]])
            jump_u = r ** self.alpha * (cl @ cs_l - cr @ cs_r)
            jump_f = r ** (self.alpha - 1.0) * (A[left] * (cl @ ds_l) - A[right] * (cr @ ds_r))
            worst = max(worst, np.max(np.abs(jump_u) / (r ** self.alpha * u_scale)),
                        np.max(np.abs(jump_f) / (r ** (self.alpha - 1.0) * f_scale)))
        return float(worst)


@lru_cache(maxsize=None)
def kellogg_profile(alpha=KELLOGG_ALPHA, b=KELLOGG_B):
    """Angular profile of the checkerboard singular solution.

    ``alpha`` is refined by a secant iteration on det M(alpha) = 0 starting at
    the given value (it moves by roundoff only when ``b`` is consistent), then
    the coefficients span the null space of M.
    """
    def det(a):
        M = kellogg_transmission_matrix(a, b)
        return np.linalg.det(M / np.abs(M).max(axis=1, keepdims=True))

    a0, a1 = alpha, alpha * (1 + 1e-7)
    f0, f1 = det(a0), det(a1)
    for _ in range(60):
        if f1 == f0:
            break
        a2 = a1 - f1 * (a1 - a0) / (f1 - f0)
        a0, f0 = a1, f1
        a1, f1 = a2, det(a2)
        if abs(a1 - a0) <= 1e-16 * abs(a1):
            break
    if abs(a1 - alpha) > 1e-6 * alpha:
        raise ProblemSpecError(f"transmission problem has no solution near alpha={alpha} for b={b}")
    M = kellogg_transmission_matrix(a1, b)
    _, sv, Vt = np.linalg.svd(M)
    v = Vt[-1]
    coeffs = v.reshape(4, 2)
    # normalise against the closed-form profile at theta = 0
    ref0 = _reference_profile(np.array([0.0]), a1, b)[0]
    coeffs = coeffs * (ref0 / coeffs[0, 0])
    res = np.linalg.norm(M @ coeffs.ravel()) / (np.linalg.norm(M) * np.linalg.norm(coeffs))
    return KelloggProfile(float(a1), float(b), coeffs, float(res))


def ex3_kellogg(alpha=KELLOGG_ALPHA, b=KELLOGG_B):
    prof = kellogg_profile(alpha, b)
    a = prof.alpha

    def exact(x):
        r, th = _polar(x)
        return r ** a * prof.phi(th)

    def grad(x):
        r, th = _polar(x)
        with np.errstate(divide="ignore"):
            m = r ** (a - 1.0)
        return _polar_gradient(r, th, a * m * prof.phi(th), m * prof.dphi(th))

    def load(x):
        return np.zeros(len(np.asarray(x).reshape(-1, 2)))

    problem = ProblemSpec({0: 1.0, 1: b}, load, exact, None, exact, grad, singular_point=(0.0, 0.0),
                          name="ex3_kellogg")
    return problem, generate_structured_mesh("kellogg_square", 8)


def builtin_case(case):
    """``(ProblemSpec, initial Mesh)`` of a built-in benchmark."""
    name = _ALIASES.get(case, case)
    if name == "ex1_sine":
        return ex1_sine()
    if name == "ex2_lshape":
        return ex2_lshape()
    if name == "ex3_kellogg":
        return ex3_kellogg()
    raise ValueError(f"unknown case {case!r}; expected one of {BUILTIN_CASES} or custom")


# ---------------------------------------------------------------------------
# problem files

_NAMESPACE = {name: getattr(np, name) for name in
              ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "arctan2", "sinh", "cosh", "tanh",
               "arcsin", "arccos", "arctan", "minimum", "maximum", "where", "pi", "e", "hypot")}


def compile_expression(text, variables=("x", "y")):
    """Vectorised callable from a numpy expression in ``variables``."""
    try:
        code = compile(text, "<expression>", "eval")
    except SyntaxError as exc:
        raise ProblemSpecError(f"invalid expression {text!r}: {exc.msg}") from None
    for name in code.co_names:
        if name not in _NAMESPACE and name not in variables:
            raise ProblemSpecError(f"unknown name {name!r} in expression {text!r}")

    def fn(pts, normals=None):
        pts = np.asarray(pts, float).reshape(-1, 2)
        env = {"x": pts[:, 0], "y": pts[:, 1]}
        if normals is not None:
            nrm = np.asarray(normals, float).reshape(-1, 2)
            env.update(nx=nrm[:, 0], ny=nrm[:, 1])
        val = eval(code, {"__builtins__": {}, **_NAMESPACE}, env)
        return np.broadcast_to(np.asarray(val, float), (len(pts),)).copy()

    fn.expression = text
    return fn


def read_config(path):
    """Parse ``key = value`` lines (``#`` starts a comment)."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ProblemSpecError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def problem_from_config(cfg):
    """ProblemSpec from a parsed problem file.

    Recognised keys: ``diffusion`` (single value) or ``diffusion.<region>``,
    ``load``, ``dirichlet``, ``neumann`` (may use nx, ny), ``exact``,
    ``exact_grad_x``, ``exact_grad_y``, ``singular_point`` (``x, y``).
    """
    diffusion = {}
    for key, val in cfg.items():
        if key == "diffusion":
            diffusion[0] = float(val)
        elif key.startswith("diffusion."):
            diffusion[int(key.split(".", 1)[1])] = float(val)
    if not diffusion:
        diffusion = {0: 1.0}
    if "load" not in cfg:
        raise ProblemSpecError("problem file needs a 'load' expression")
    load = compile_expression(cfg["load"])
    exact = compile_expression(cfg["exact"]) if "exact" in cfg else None
    dirichlet = compile_expression(cfg["dirichlet"]) if "dirichlet" in cfg else exact
    neumann = compile_expression(cfg["neumann"], ("x", "y", "nx", "ny")) if "neumann" in cfg else None
    grad = None
    if "exact_grad_x" in cfg and "exact_grad_y" in cfg:
        gx = compile_expression(cfg["exact_grad_x"])
        gy = compile_expression(cfg["exact_grad_y"])

        def grad(pts):
            return np.column_stack([gx(pts), gy(pts)])
    sp_ = None
    if "singular_point" in cfg:
        sp_ = tuple(float(v) for v in cfg["singular_point"].split(","))
    return ProblemSpec(diffusion, load, dirichlet, neumann, exact, grad, singular_point=sp_, name="custom")


def custom_case(mesh_path, config_path):
    try:
        mesh = read_mesh(mesh_path)
        cfg = read_config(config_path)
    except OSError as exc:
        raise OSError(f"cannot read custom case: {exc}") from exc
    return problem_from_config(cfg), mesh, cfg
