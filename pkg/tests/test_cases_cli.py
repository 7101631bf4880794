import os

import numpy as np
import pytest

from mixhho.bench_cli import CSV_COLUMNS, RunConfig, export_vtu, main, read_csv, read_vtu, run_study
from mixhho.cases import (KELLOGG_B, builtin_case, compile_expression, kellogg_profile, problem_from_config,
                          read_config)
from mixhho.errors import ProblemSpecError
from mixhho.mesh import generate_structured_mesh, write_mesh


def test_builtin_cases():
    p1, m1 = builtin_case("ex1")
    x = np.array([[0.5, 0.5]])
    assert p1.load(x)[0] == pytest.approx(2 * np.pi ** 2)
    assert m1.n_cells == 32
    p2, m2 = builtin_case("ex2_lshape")
    assert p2.exact(np.array([[-np.sqrt(0.5), np.sqrt(0.5)]]))[0] == pytest.approx(1.0)   # r = 1, theta = 3pi/4
    assert m2.n_cells == 96 and p2.singular_point == (0.0, 0.0)
    p3, m3 = builtin_case("ex3")
    A = p3.cell_diffusion(m3)
    mid = m3.vertices[m3.cells].mean(axis=1)
    assert np.all(A[mid[:, 0] * mid[:, 1] > 0] == KELLOGG_B) and np.all(A[mid[:, 0] * mid[:, 1] < 0] == 1.0)
    with pytest.raises(ValueError):
        builtin_case("ex9")


def test_kellogg_profile_solves_transmission_problem():
    prof = kellogg_profile()
    assert prof.transmission_residual() <= 1e-10
    assert prof.residual <= 1e-12
    assert prof.alpha == pytest.approx(0.1, abs=1e-14)
    # gradient consistent with the solution
    p3, _ = builtin_case("ex3")
    x = np.array([[0.3, 0.2], [-0.4, 0.1], [-0.2, -0.5], [0.6, -0.3]])
    h = 1e-6
    fd = np.column_stack([(p3.exact(x + [h, 0]) - p3.exact(x - [h, 0])) / (2 * h),
                          (p3.exact(x + [0, h]) - p3.exact(x - [0, h])) / (2 * h)])
    assert np.allclose(fd, p3.exact_grad(x), rtol=1e-6, atol=1e-6)


def test_expressions_and_config(tmp_path):
    f = compile_expression("sin(pi * x) + y ** 2")
    assert f(np.array([[0.5, 2.0]]))[0] == pytest.approx(5.0)
    assert compile_expression("3.0")(np.zeros((4, 2))).shape == (4,)
    for bad in ("__import__('os')", "x +", "open('f')"):
        with pytest.raises(ProblemSpecError):
            compile_expression(bad)
    cfg_path = tmp_path / "p.cfg"
    cfg_path.write_text("# comment\ndiffusion = 2\nload = -2 * 2 * 2  # -A lap u\nexact = x**2 + y**2\n"
                        "exact_grad_x = 2*x\nexact_grad_y = 2*y\n")
    prob = problem_from_config(read_config(cfg_path))
    assert prob.diffusion == {0: 2.0} and prob.has_exact
    bad = tmp_path / "bad.cfg"
    bad.write_text("load\n")
    with pytest.raises(ProblemSpecError):
        read_config(bad)


def test_cli_uniform_csv(tmp_path):
    out = tmp_path / "u.csv"
    assert main(["solve", "--case", "ex1", "--k", "1", "--refinements", "2", "--out", str(out)]) == 0
    header, rows = read_csv(out)
    assert tuple(header) == CSV_COLUMNS and len(rows) == 2
    assert [r["cells"] for r in rows] == [32, 128]
    for r in rows:
        assert sum(r[c] for c in ("pct_res", "pct_sta", "pct_nor", "pct_tan")) == pytest.approx(100.0)
        assert r["effectivity"] == pytest.approx(r["eta_total"] / r["energy_error"], rel=1e-14)
    out2 = tmp_path / "u2.csv"
    main(["solve", "--case", "ex1", "--k", "1", "--refinements", "2", "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes()


def test_cli_adaptive_vtu_and_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("case = ex2\ntheta = 0.5\nmax_dofs = 400\nk = 0\n")
    out = tmp_path / "a.csv"
    vtu = tmp_path / "vtu"
    assert main(["adapt", "--config", str(cfg), "--k", "1", "--out", str(out), "--vtu", str(vtu)]) == 0
    _, rows = read_csv(out)
    assert rows[-1]["dofs"] >= 400 and all(r["dofs"] < 400 for r in rows[:-1])
    assert rows[0]["dofs"] == 2 * len(builtin_case("ex2")[1].interior_faces)   # k = 1 from the flag wins
    files = sorted(os.listdir(vtu))
    assert len(files) == 1
    _, _, data = read_vtu(vtu / files[0])
    assert {"eta_res", "eta_sta", "eta_nor", "eta_tan", "eta"} <= set(data)
    assert len(data["eta"]) == int(rows[-1]["cells"])


def test_vtu_round_trip(tmp_path):
    mesh = generate_structured_mesh("square", 2)
    vals = np.linspace(0.0, 1.0, mesh.n_cells)
    export_vtu(mesh, {"v": vals}, tmp_path / "m.vtu")
    pts, cells, data = read_vtu(tmp_path / "m.vtu")
    assert np.array_equal(data["v"], vals)
    assert np.array_equal(pts[:, :2], mesh.vertices)
    assert np.array_equal(cells, mesh.cells)
    with pytest.raises(ValueError):
        export_vtu(mesh, {"v": vals[:-1]}, tmp_path / "bad.vtu")


def test_cli_errors_and_failure_row(tmp_path):
    assert main(["solve", "--case", "nope"]) == 2
    assert main(["adapt", "--case", "ex1"]) == 2              # missing theta
    assert main(["adapt", "--case", "ex1", "--theta", "1.5"]) == 2
    assert main(["bogus"]) == 2
    assert main(["solve", "--case", "custom", "--mesh", str(tmp_path / "none.msh"),
                 "--config", str(tmp_path / "none.cfg")]) == 2
    mesh_path = tmp_path / "n.msh"
    write_mesh(generate_structured_mesh("square", 2, boundary_labels="N"), mesh_path)
    cfg = tmp_path / "n.cfg"
    cfg.write_text("load = 1\nneumann = 0\n")
    out = tmp_path / "f.csv"
    assert main(["solve", "--mesh", str(mesh_path), "--config", str(cfg), "--out", str(out)]) == 1
    _, rows = read_csv(out)
    assert rows[-1]["FAILED"][0] == "0" and "WellPosednessError" in rows[-1]["FAILED"][1]


def test_custom_case_matches_builtin(tmp_path):
    mesh_path = tmp_path / "sq.msh"
    write_mesh(generate_structured_mesh("square", 4), mesh_path)
    cfg = tmp_path / "sine.cfg"
    cfg.write_text("load = 2 * pi**2 * sin(pi*x) * sin(pi*y)\nexact = sin(pi*x) * sin(pi*y)\n"
                   "exact_grad_x = pi * cos(pi*x) * sin(pi*y)\nexact_grad_y = pi * sin(pi*x) * cos(pi*y)\n")
    a = run_study(RunConfig(case="custom", mesh_path=str(mesh_path), config_path=str(cfg), refinements=1))
    b = run_study(RunConfig(case="ex1", refinements=1))
    assert a[0].energy_error == pytest.approx(b[0].energy_error, rel=1e-12)
    assert a[0].eta_total == pytest.approx(b[0].eta_total, rel=1e-12)


def test_psweep_rows():
    recs = run_study(RunConfig(case="ex1", mode="psweep", kmin=0, kmax=2, cells=128))
    assert [r.iter for r in recs] == [0, 1, 2] and all(r.cells == 128 for r in recs)
    with pytest.raises(ValueError):
        run_study(RunConfig(case="ex1", mode="psweep", cells=100))
