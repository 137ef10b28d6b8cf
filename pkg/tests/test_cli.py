import json

import pytest

from conftest import config
from obstacle.cli import main


def write(tmp_path, name="cfg.json", **overrides):
    cfg = config(**overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_validate_default(tmp_path, capsys):
    assert main(["validate", write(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "G_chain" in out


def test_validate_rejects_bad_geometry(tmp_path):
    path = write(tmp_path, penalization={"omega_left": -1.0, "omega_right": 1.0})
    assert main(["validate", path]) == 3


def test_validate_rejects_malformed_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["validate", str(bad)]) == 3
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"lambda": 1.0}))
    assert main(["validate", str(missing)]) == 3


def test_solve_writes_reports(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", write(tmp_path, mesh={"n": 201}), "--lambda", "10", "--out", str(out)]) == 0
    for name in ("u.json", "u.csv", "w.json", "w.csv", "w_trace.csv"):
        assert (out / name).exists()
    w = json.loads((out / "w.json").read_text())
    assert w["c_lambda"] >= w["rho"]


def test_solve_ball_violation_is_invalid(tmp_path):
    path = write(tmp_path, r=0.2, relax_smallness=True, mesh={"n": 201})
    assert main(["solve", path, "--lambda", "10", "--out", str(tmp_path / "o")]) == 3


def test_sweep_command(tmp_path, capsys):
    cfg = config(mesh={"n": 201})
    cfg["sweep"] = {"lambdas": [1.0, 100.0]}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["sweep", str(path), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "summary.csv").read_text().startswith("lambda,I_u,I_w,rho,sigma,")


def test_sweep_rejects_unordered_lambdas(tmp_path):
    cfg = config(mesh={"n": 201})
    cfg["sweep"] = {"lambdas": [10.0, 1.0]}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["sweep", str(path), "--out", str(tmp_path / "s")]) == 3


def test_oracle_command(tmp_path, capsys):
    assert main(["oracle", write(tmp_path), "--n", "12"]) == 0
    last = capsys.readouterr().out.strip().splitlines()[-1]
    info = json.loads(last)
    assert info["kkt_points"] >= 2 and info["matched"]


def test_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
