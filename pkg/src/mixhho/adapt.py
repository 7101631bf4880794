"""Dörfler marking and the solve / estimate / mark / refine loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from .errors import HHOError, MarkingError
from .estimator import energy_error, estimate
from .mesh import refine_nvb
from .solver import solve_problem


@dataclass(frozen=True)
class AdaptConfig:
    k: int
    theta: float
    max_dofs: int = 200_000
    max_iters: int = 100
    marker_quantity: str = "total"     # "total" or one of res, sta, nor, tan
    tol: float = 1e-12

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.max_iters < 0 or self.max_dofs < 1:
            raise ValueError("max_iters must be >= 0 and max_dofs >= 1")
        if self.marker_quantity not in ("total", "res", "sta", "nor", "tan"):
            raise ValueError(f"unknown marker quantity {self.marker_quantity!r}")


@dataclass
class IterationRecord:
    iter: int
    cells: int
    dofs: int
    energy_error: float
    eta_total: float
    eta_res: float
    eta_sta: float
    eta_nor: float
    eta_tan: float
    osc: float
    effectivity: float
    pct_res: float
    pct_sta: float
    pct_nor: float
    pct_tan: float

    def as_dict(self):
        return asdict(self)


@dataclass
class AdaptHistory:
    records: list = field(default_factory=list)
    mesh: object = None          # last mesh
    solution: object = None      # last solution
    report: object = None        # last estimator report

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def count_dofs(mesh, k):
    """Globally coupled unknowns: face unknowns on interior faces."""
    return len(mesh.interior_faces) * (k + 1)


def make_record(it, mesh, k, report, err):
    agg = report.aggregates
    pct = report.contributions
    total = report.eta_total
    eff = total / err if err and np.isfinite(err) and err > 0 else math.nan
    return IterationRecord(it, mesh.n_cells, count_dofs(mesh, k), err, total, agg["res"], agg["sta"],
                           agg["nor"], agg["tan"], report.osc_total, eff,
                           pct["res"], pct["sta"], pct["nor"], pct["tan"])


def dorfler_mark(indicators, theta):
    """Minimal set of cells carrying ``theta`` of the squared indicator mass.

    ``indicators`` are per-cell eta_K >= 0; the criterion is applied to eta_K^2.
    Ties are broken by ascending cell id.
    """
    eta = np.asarray(indicators, dtype=float)
    if not (0.0 < theta <= 1.0):
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if eta.ndim != 1 or np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise ValueError("indicators must be a 1d array of finite non-negative values")
    e2 = eta ** 2
    total = e2.sum()
    if total <= 0.0:
        raise MarkingError("all indicators vanish; nothing to mark")
    order = np.lexsort((np.arange(len(e2)), -e2))
    npos = int(np.count_nonzero(e2))
    if theta >= 1.0:
        return np.sort(order[:npos])
    csum = np.cumsum(e2[order])
    n = min(int(np.searchsorted(csum, theta * total, side="left")) + 1, npos)
    return np.sort(order[:n])


def _marker(report, quantity):
    if quantity == "total":
        return np.sqrt(report.marker())
    return getattr(report, "eta_" + quantity)


def adaptive_loop(mesh, problem, config, callback: Optional[Callable] = None, bump=6):
    """SOLVE -> ESTIMATE -> MARK -> REFINE until the DoF cap or the iteration cap.

    ``callback(record)`` is invoked after each iteration (used for streaming CSV).
    """
    history = AdaptHistory()
    k = config.k
    it = 0
    while True:
        try:
            sol = solve_problem(mesh, problem, k, tol=config.tol)
            report = estimate(sol, problem)
            err = energy_error(sol, problem, bump=bump) if problem.has_exact else math.nan
        except HHOError as exc:
            exc.iteration = it
            raise
        rec = make_record(it, mesh, k, report, err)
        history.records.append(rec)
        history.mesh, history.solution, history.report = mesh, sol, report
        if callback is not None:
            callback(rec)
        if it >= config.max_iters or rec.dofs >= config.max_dofs:
            break
        eta = _marker(report, config.marker_quantity)
        if not np.any(eta > 0):
            break
        marked = dorfler_mark(eta, config.theta)
        mesh = refine_nvb(mesh, marked)
        it += 1
    return history


def fit_rate(dofs, errors=None, window=None):
    """Least-squares slope of log(error) against log(DoFs).

    Accepts either an :class:`AdaptHistory` (uses dofs and energy_error) or
    two sequences.  ``window`` keeps only the last ``window`` points.
    """
    if isinstance(dofs, AdaptHistory):
        dofs, errors = dofs.column("dofs"), dofs.column("energy_error")
    x = np.asarray(dofs, dtype=float)
    y = np.asarray(errors, dtype=float)
    if window is not None:
        x, y = x[-window:], y[-window:]
    if len(x) < 2 or len(x) != len(y):
        raise ValueError("need at least two (dofs, error) pairs of equal length")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("dofs and errors must be positive")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)


__all__ = ["AdaptConfig", "AdaptHistory", "IterationRecord", "adaptive_loop", "count_dofs", "dorfler_mark",
           "fit_rate", "make_record"]
