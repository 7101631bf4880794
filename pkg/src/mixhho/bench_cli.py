"""Study driver, CSV / VTU output and the ``hho`` command line."""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import xml.etree.ElementTree as ET
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .adapt import AdaptConfig, IterationRecord, adaptive_loop, make_record
from .cases import BUILTIN_CASES, builtin_case, custom_case, read_config
from .errors import HHOError
from .estimator import energy_error, estimate
from .mesh import refine_uniform
from .solver import solve_problem

CSV_COLUMNS = tuple(f.name for f in fields(IterationRecord))
_CASE_NAMES = {"ex1": "ex1_sine", "ex2": "ex2_lshape", "ex3": "ex3_kellogg"}


@dataclass
class RunConfig:
    case: str = "ex1_sine"
    mode: str = "uniform"              # uniform | adaptive | psweep
    k: int = 1
    theta: Optional[float] = None
    refinements: int = 5
    max_dofs: int = 200_000
    max_iters: int = 100
    bump: int = 6
    out: Optional[str] = None
    vtu_dir: Optional[str] = None
    mesh_path: Optional[str] = None
    config_path: Optional[str] = None
    cells: Optional[int] = None         # psweep: target cell count
    kmin: int = 1
    kmax: int = 9

    def __post_init__(self):
        self.case = _CASE_NAMES.get(self.case, self.case)
        if self.case not in BUILTIN_CASES + ("custom",):
            raise ValueError(f"unknown case {self.case!r}")
        if self.mode not in ("uniform", "adaptive", "psweep"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "adaptive":
            if self.theta is None:
                raise ValueError("adaptive mode needs theta")
            if not (0.0 < self.theta <= 1.0):
                raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        elif self.theta is not None:
            raise ValueError("theta is only meaningful in adaptive mode")
        if self.k < 0 or self.refinements < 1 or self.bump < 0:
            raise ValueError("k and bump must be non-negative, refinements positive")
        if self.mode == "psweep" and not (0 <= self.kmin <= self.kmax):
            raise ValueError("need 0 <= kmin <= kmax")
        if self.case == "custom" and (self.mesh_path is None or self.config_path is None):
            raise ValueError("custom case needs a mesh file and a problem file")


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.17g}"


class CsvWriter:
    """Streams records so partial studies survive failures."""

    def __init__(self, path):
        self.path = path
        self._fh = None
        if path is not None:
            d = os.path.dirname(os.path.abspath(path))
            os.makedirs(d, exist_ok=True)
            self._fh = open(path, "w", newline="")
            self._w = csv.writer(self._fh, lineterminator="\n")
            self._w.writerow(CSV_COLUMNS)
            self._fh.flush()

    def write(self, rec):
        if self._fh is not None:
            self._w.writerow([_fmt(getattr(rec, c)) for c in CSV_COLUMNS])
            self._fh.flush()

    def fail(self, iteration, message):
        if self._fh is not None:
            self._w.writerow(["FAILED", iteration, message.replace("\n", " ")])
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_csv(path):
    """Rows of a study CSV as dicts of floats (a failure row is returned as-is)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, out = rows[0], []
    for r in rows[1:]:
        if r and r[0] == "FAILED":
            out.append({"FAILED": r[1:]})
        else:
            out.append({h: float(v) for h, v in zip(header, r)})
    return header, out


def export_vtu(mesh, cell_fields, path):
    """Write an ASCII VTK unstructured grid of triangles with per-cell scalars."""
    for name, vals in cell_fields.items():
        if len(np.asarray(vals).ravel()) != mesh.n_cells:
            raise ValueError(f"field {name!r} has {len(np.asarray(vals).ravel())} values, "
                             f"mesh has {mesh.n_cells} cells")
    vtk = ET.Element("VTKFile", type="UnstructuredGrid", version="0.1", byte_order="LittleEndian")
    grid = ET.SubElement(vtk, "UnstructuredGrid")
    piece = ET.SubElement(grid, "Piece", NumberOfPoints=str(mesh.n_vertices), NumberOfCells=str(mesh.n_cells))
    pts = ET.SubElement(ET.SubElement(piece, "Points"), "DataArray", type="Float64",
                        NumberOfComponents="3", format="ascii")
    xyz = np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])
    pts.text = " ".join(f"{v:.17g}" for v in xyz.ravel())
    cells = ET.SubElement(piece, "Cells")
    conn = ET.SubElement(cells, "DataArray", type="Int64", Name="connectivity", format="ascii")
    conn.text = " ".join(map(str, mesh.cells.ravel()))
    offs = ET.SubElement(cells, "DataArray", type="Int64", Name="offsets", format="ascii")
    offs.text = " ".join(map(str, 3 * np.arange(1, mesh.n_cells + 1)))
    types = ET.SubElement(cells, "DataArray", type="UInt8", Name="types", format="ascii")
    types.text = " ".join(["5"] * mesh.n_cells)
    cd = ET.SubElement(piece, "CellData")
    for name, vals in cell_fields.items():
        arr = ET.SubElement(cd, "DataArray", type="Float64", Name=name, format="ascii")
        arr.text = " ".join(f"{float(v):.17g}" for v in np.asarray(vals, float).ravel())
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    ET.ElementTree(vtk).write(path, xml_declaration=True, encoding="utf-8")
    return path


def read_vtu(path):
    """Parse a file written by :func:`export_vtu`: ``(points, cells, fields)``."""
    piece = ET.parse(path).getroot().find("UnstructuredGrid/Piece")
    pts = np.array(piece.find("Points/DataArray").text.split(), float).reshape(-1, 3)
    conn = {a.get("Name"): a for a in piece.find("Cells")}
    cells = np.array(conn["connectivity"].text.split(), int).reshape(-1, 3)
    out = {}
    cd = piece.find("CellData")
    if cd is not None:
        for a in cd:
            out[a.get("Name")] = np.array((a.text or "").split(), float)
    return pts, cells, out


def estimator_fields(mesh, report, local_error=None):
    f = {"eta_res": report.eta_res, "eta_sta": report.eta_sta, "eta_nor": report.eta_nor,
         "eta_tan": report.eta_tan, "osc": report.osc_dat, "eta": np.sqrt(report.marker()),
         "region": mesh.regions.astype(float)}
    if local_error is not None:
        f["energy_error"] = np.sqrt(local_error)
    return f


# ---------------------------------------------------------------------------
# studies


def load_case(config):
    if config.case == "custom":
        problem, mesh, _ = custom_case(config.mesh_path, config.config_path)
        return problem, mesh
    return builtin_case(config.case)


def _evaluate(mesh, problem, k, bump):
    sol = solve_problem(mesh, problem, k)
    report = estimate(sol, problem)
    local = energy_error(sol, problem, bump=bump, per_cell=True) if problem.has_exact else None
    err = float(np.sqrt(local.sum())) if local is not None else math.nan
    return sol, report, err, local


def _vtu_path(config, k, it):
    return os.path.join(config.vtu_dir, f"{config.case}_{config.mode}_k{k}_{it:03d}.vtu")


def run_study(config):
    """Run a study and return its records; writes the CSV (and VTU files) if requested."""
    problem, mesh = load_case(config)
    writer = CsvWriter(config.out)
    records = []
    it = 0
    try:
        if config.mode == "uniform":
            for it in range(config.refinements):
                if it:
                    mesh = refine_uniform(mesh)
                _, report, err, local = _evaluate(mesh, problem, config.k, config.bump)
                rec = make_record(it, mesh, config.k, report, err)
                records.append(rec)
                writer.write(rec)
                if config.vtu_dir:
                    export_vtu(mesh, estimator_fields(mesh, report, local), _vtu_path(config, config.k, it))
        elif config.mode == "adaptive":
            acfg = AdaptConfig(config.k, config.theta, config.max_dofs, config.max_iters)

            def emit(rec):
                records.append(rec)
                writer.write(rec)

            hist = adaptive_loop(mesh, problem, acfg, callback=emit, bump=config.bump)
            it = len(hist) - 1
            if config.vtu_dir:
                export_vtu(hist.mesh, estimator_fields(hist.mesh, hist.report),
                           _vtu_path(config, config.k, it))
        else:
            target = config.cells or mesh.n_cells
            while mesh.n_cells < target:
                mesh = refine_uniform(mesh)
            if mesh.n_cells != target:
                raise ValueError(f"no uniform refinement of the initial mesh has {target} cells")
            for k in range(config.kmin, config.kmax + 1):
                it = k
                _, report, err, _ = _evaluate(mesh, problem, k, config.bump)
                rec = make_record(k, mesh, k, report, err)
                records.append(rec)
                writer.write(rec)
    except Exception as exc:
        writer.fail(getattr(exc, "iteration", it), f"{type(exc).__name__}: {exc}")
        raise
    finally:
        writer.close()
    return records


# ---------------------------------------------------------------------------
# command line

_CONFIG_KEYS = {"k": int, "theta": float, "refinements": int, "max_dofs": int, "max_iters": int,
                "bump": int, "out": str, "vtu": str, "mesh": str, "case": str, "cells": int,
                "kmin": int, "kmax": int}


def _parser():
    p = argparse.ArgumentParser(prog="hho", description="Mixed-order HHO solver with hp residual estimators.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--case", help="ex1 | ex2 | ex3 | custom (or ex1_sine, ex2_lshape, ex3_kellogg)")
        sp.add_argument("--k", type=int, help="face degree (cells use k+1)")
        sp.add_argument("--out", help="CSV output path")
        sp.add_argument("--vtu", help="directory for VTU files")
        sp.add_argument("--mesh", help="mesh file (custom case)")
        sp.add_argument("--config", help="key = value file with problem data and/or options")
        sp.add_argument("--bump", type=int, help="extra quadrature exactness for the energy error")

    s = sub.add_parser("solve", help="uniform refinement study")
    common(s)
    s.add_argument("--refinements", type=int, help="number of meshes (default 5)")
    a = sub.add_parser("adapt", help="adaptive study with Dörfler marking")
    common(a)
    a.add_argument("--theta", type=float, help="bulk fraction in (0, 1]")
    a.add_argument("--max-dofs", type=int, dest="max_dofs")
    a.add_argument("--max-iters", type=int, dest="max_iters")
    w = sub.add_parser("psweep", help="effectivity against k on a fixed mesh")
    common(w)
    w.add_argument("--cells", type=int, help="cell count of the fixed mesh")
    w.add_argument("--kmin", type=int)
    w.add_argument("--kmax", type=int)
    return p


def build_config(args):
    """Merge a parsed command line with the optional config file (flags win)."""
    cfg = read_config(args.config) if args.config else {}
    merged = {}
    for key, conv in _CONFIG_KEYS.items():
        if key in cfg:
            merged[key] = conv(cfg[key])
    for key in _CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    mode = {"solve": "uniform", "adapt": "adaptive", "psweep": "psweep"}[args.command]
    if mode != "adaptive":
        merged.pop("theta", None)
    case = merged.pop("case", None) or ("custom" if args.mesh or "mesh" in cfg else "ex1_sine")
    kw = dict(case=case, mode=mode, out=merged.pop("out", None), vtu_dir=merged.pop("vtu", None),
              mesh_path=merged.pop("mesh", None), config_path=args.config)
    allowed = {f.name for f in fields(RunConfig)}
    kw.update({k: v for k, v in merged.items() if k in allowed})
    return RunConfig(**kw)


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = build_config(args)
    except (ValueError, OSError, HHOError) as exc:
        print(f"hho: error: {exc}", file=sys.stderr)
        return 2
    try:
        records = run_study(config)
    except HHOError as exc:
        print(f"hho: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"hho: error: {exc}", file=sys.stderr)
        return 2
    for r in records:
        print(f"iter {r.iter:3d}  cells {r.cells:7d}  dofs {r.dofs:8d}  err {r.energy_error:.4e}  "
              f"eta {r.eta_total:.4e}  eff {r.effectivity:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
