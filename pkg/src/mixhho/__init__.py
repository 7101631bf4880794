"""Mixed-order hybrid high-order (HHO) solver for 2D diffusion with hp residual estimators."""
from .adapt import AdaptConfig, AdaptHistory, adaptive_loop, dorfler_mark, fit_rate
from .cases import builtin_case
from .estimator import EstimatorReport, conservation_residual, energy_error, estimate, numerical_flux
from .mesh import Mesh, build_connectivity, generate_structured_mesh, refine_nvb, refine_uniform
from .solver import ProblemSpec, solve_problem

__version__ = "0.1.0"
__all__ = [
    "AdaptConfig", "AdaptHistory", "EstimatorReport", "Mesh", "ProblemSpec", "adaptive_loop", "build_connectivity",
    "builtin_case", "conservation_residual", "dorfler_mark", "energy_error", "estimate", "fit_rate",
    "generate_structured_mesh", "numerical_flux", "refine_nvb", "refine_uniform", "solve_problem",
]
