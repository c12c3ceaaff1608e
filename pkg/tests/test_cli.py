import json
import os
import subprocess
import sys

import jsonschema
import pytest

from pyrafem.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, REPORT_SCHEMA, main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def verify_report():
    proc = subprocess.run([sys.executable, "-m", "pyrafem.cli", "verify", "--k-max", "3"],
                          capture_output=True, text=True, env={**os.environ, "PYRAFEM_THREADS": "1"})
    return proc


def test_verify_full_suite(verify_report):
    assert verify_report.returncode == EXIT_OK
    report = json.loads(verify_report.stdout)
    jsonschema.validate(report, json.loads(REPORT_SCHEMA))
    assert report["passed"]
    assert all(c["status"] == "pass" for c in report["checks"])
    assert report["theorem_3_1_max_residual"] <= 1e-12


def test_verify_deterministic(verify_report, capsys):
    code, out, _ = run(["verify", "--k-max", "3"], capsys)
    assert code == EXIT_OK
    assert out == verify_report.stdout


def test_schema_is_valid():
    jsonschema.Draft202012Validator.check_schema(json.loads(REPORT_SCHEMA))


@pytest.mark.parametrize("argv", [
    ["verify", "--k-max", "0"],
    ["spaces", "--k", "0"],
    ["spaces", "--s", "4"],
    ["quadtable", "--q", "-1"],
    ["convergence", "--n", "4,2"],
    ["convergence", "--n", "1,1"],
    ["convergence", "--A", "bogus"],
    ["convergence", "--u", "bogus"],
    ["convergence", "--k", "4", "--n", "64"],
    ["frobnicate"],
    ["spaces", "--k", "x"],
])
def test_config_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == EXIT_CONFIG
    assert err


def test_spaces_json(capsys):
    code, out, _ = run(["spaces", "--k-max", "2"], capsys)
    assert code == EXIT_OK
    rows = {(r["s"], r["k"]): r for r in json.loads(out)["rows"]}
    assert rows[0, 1]["dim_reduced"] == 5
    assert rows[0, 2]["dim_reduced"] == 14 and rows[0, 2]["dim_underlying"] == 19
    for k in (1, 2):
        dims = [rows[s, k]["dim_reduced"] for s in range(4)]
        assert dims[0] - dims[1] + dims[2] - dims[3] == 1
        assert all(rows[s, k]["euler"] == 1 and rows[s, k]["exact"] for s in range(4))
    assert rows[1, 2]["dim_x"] == [4, 13, 12]


def test_spaces_csv(capsys):
    code, out, _ = run(["spaces", "--k", "2", "--s", "0", "--format", "csv"], capsys)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0] == "s,k,dim_underlying,dim_conforming,dim_reduced,dim_x,rank_d,euler,exact"
    assert lines[1] == "0,2,19,15,14,1 4 9,13,1,true"


def test_quadtable(capsys, tmp_path):
    code, out, _ = run(["quadtable", "--q", "2"], capsys)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0] == "index,xi,eta,zeta,weight"
    assert len(lines) == 28
    assert sum(float(l.split(",")[4]) for l in lines[1:]) == pytest.approx(1 / 3, rel=1e-14)
    target = tmp_path / "rule.json"
    assert main(["quadtable", "--k", "1", "--format", "json", "--out", str(target)]) == EXIT_OK
    data = json.loads(target.read_text())
    assert data["order"] == 1 and len(data["weights"]) == 8


def test_convergence_csv(capsys):
    code, out, err = run(["convergence", "--k", "1", "--q", "1", "--n", "1,2,4"], capsys)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0] == "n,h,dofs,l2_error,h1_error,consistency,rate_l2,rate_h1,rate_consistency"
    assert len(lines) == 4
    assert "fitted rate h1_error" in err
    assert float(err.split("fitted rate h1_error:")[1].split()[0]) > 0
    # n=1 has a single free unknown, so the finest pair carries the rate
    assert 0.8 <= float(lines[-1].split(",")[7]) <= 1.3


def test_convergence_deterministic(capsys):
    a = run(["convergence", "--k", "1", "--n", "1,2", "--format", "json"], capsys)[1]
    b = run(["convergence", "--k", "1", "--n", "1,2", "--format", "json"], capsys)[1]
    assert a == b
    assert json.loads(a)["rows"][0]["consistency"] is None


def test_convergence_under_integrated_is_reported(capsys):
    code, out, err = run(["convergence", "--k", "1", "--q", "0", "--n", "1,2"], capsys)
    assert code == EXIT_OK
    assert "fitted rate h1_error" in err


def test_consistency_csv(capsys):
    code, out, err = run(["consistency", "--k", "1", "--n", "1,2", "--A", "poly1"], capsys)
    assert code == EXIT_OK
    assert len(out.splitlines()) == 3
    assert "fitted rate consistency" in err and "fitted rate elliptic" in err


def test_solver_failure_exit_code(capsys, monkeypatch):
    from pyrafem import meshfem
    from pyrafem.errors import IndefiniteSystemError

    def boom(*args, **kwargs):
        raise IndefiniteSystemError("forced")

    monkeypatch.setattr(meshfem, "solve_system", boom)
    code, _, err = run(["convergence", "--k", "1", "--n", "1"], capsys)
    assert code == EXIT_SOLVER
    assert "solver failed" in err


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "pyrafem.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "convergence" in proc.stdout
