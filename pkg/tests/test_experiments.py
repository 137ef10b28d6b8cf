import csv
import io
import math

import pytest

from conftest import config, instance
from obstacle import experiments as ex
from obstacle.experiments import LambdaRecord, SweepConfig, TheoremVerdict

HEADER = ("lambda,I_u,I_w,rho,sigma,norm_u,norm_w,loc_max_u,loc_max_w,a,conc_u,conc_w,linf_u,linf_w,"
          "dist_limit_u,solves_u,solves_w,converged_u,converged_w")


@pytest.fixture(scope="module")
def small_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    cfg = SweepConfig(instance(mesh={"n": 201}), (1.0, 100.0), out_dir=str(out))
    return ex.run_sweep(cfg), out


def test_sweep_config_rejects_bad_lambdas(default_inst):
    with pytest.raises(ValueError):
        SweepConfig(default_inst, (1.0, 1.0))
    with pytest.raises(ValueError):
        SweepConfig(default_inst, (10.0, 1.0))
    with pytest.raises(ValueError):
        SweepConfig(default_inst, (0.0, 1.0))


def test_sweep_config_default_lambdas():
    cfg = SweepConfig.from_dict(config())
    assert cfg.lambdas == (1.0, 3.16, 10.0, 31.6, 100.0, 316.0, 1000.0)


def test_check_instance_default_passes():
    rep = ex.check_instance(config())
    assert rep.passed, rep.lines()


def test_check_instance_omega_equal_O_fails():
    rep = ex.check_instance(config(penalization={"omega_left": -1.0, "omega_right": 1.0}))
    bad = {c.name for c in rep.failures()}
    assert "closure_O_in_Omega" in bad


def test_check_instance_wide_bump_fails_with_witness():
    rep = ex.check_instance(config(obstacle={"halfwidth": 1.2, "amplitude": 0.05}))
    fail = next(c for c in rep.failures() if c.name == "supp_phi_in_O")
    assert fail.witness is not None and abs(fail.witness) >= 1.0


def _rec(lam, loc_u, loc_w):
    return LambdaRecord(lam=lam, loc_max_u=loc_u, loc_max_w=loc_w, a=0.5, converged_u=True, converged_w=True)


def test_lambda_star_bracket():
    v = TheoremVerdict([_rec(1, 0.9, 0.2), _rec(10, 0.3, 0.7), _rec(100, 0.1, 0.4), _rec(1000, 0.0, 0.1)])
    assert v.detect_lambda_star() == 100
    assert v.lambda_star_bracket == (10, 100)


def test_lambda_star_absent_when_last_fails():
    v = TheoremVerdict([_rec(1, 0.1, 0.1), _rec(10, 0.1, 0.6)])
    assert v.detect_lambda_star() is None and v.lambda_star_bracket is None


def test_lambda_star_at_first_value():
    v = TheoremVerdict([_rec(1, 0.1, 0.1), _rec(10, 0.0, 0.0)])
    assert v.detect_lambda_star() == 1
    assert v.lambda_star_bracket == (0.0, 1)


def test_failed_record_does_not_solve():
    r = LambdaRecord(lam=1.0, a=0.5)
    assert not r.solves_original_u and not r.solves_original_w


def test_summary_header_and_flags(small_sweep):
    verdict, out = small_sweep
    text = (out / "summary.csv").read_text()
    assert text.splitlines()[0] == HEADER
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 2
    for row in rows:
        # flags are recomputable from the CSV alone
        assert row["solves_u"] == ("true" if float(row["loc_max_u"]) <= float(row["a"]) else "false")
        assert row["solves_w"] == ("true" if float(row["loc_max_w"]) <= float(row["a"]) else "false")
        assert row["converged_u"] == row["converged_w"] == "true"


def test_energy_ordering_on_converged_rows(small_sweep):
    verdict, _ = small_sweep
    for r in verdict.records:
        assert r.I_u < r.rho <= r.I_w <= r.sigma
        assert r.distinct


def test_sweep_files(small_sweep):
    verdict, out = small_sweep
    names = {p.name for p in out.iterdir()}
    assert set(ex.PLOT_NAMES) <= names
    assert {"summary.csv", "verdict.json", "timings.json", "limit_u.csv"} <= names
    assert "00_lambda_1_u.json" in names and "01_lambda_100_w_trace.csv" in names


def test_sweep_is_deterministic(small_sweep, tmp_path):
    verdict, out = small_sweep
    cfg = SweepConfig(instance(mesh={"n": 201}), (1.0, 100.0), out_dir=str(tmp_path))
    again = ex.run_sweep(cfg)
    assert again.summary_csv() == verdict.summary_csv()
    for name in ex.PLOT_NAMES + ("summary.csv", "verdict.json"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_empty_sweep_writes_no_plots(tmp_path):
    assert ex.emit_plots(TheoremVerdict([]), {}, tmp_path) == []
    assert list(tmp_path.iterdir()) == []


def test_solver_failure_is_recorded_not_raised():
    inst = instance(r=0.2, relax_smallness=True, mesh={"n": 201})
    res = ex.solve_lambda(inst, 10.0)
    assert res.record.error_u.startswith("BallViolation")
    assert not res.record.converged_u and not res.record.converged_w
    assert math.isnan(res.record.I_w)
