import json

import numpy as np
import pytest
from pydantic import ValidationError

from proxal import harness
from proxal.cli import (
    EXIT_AUDIT_FAILED,
    EXIT_CONFIG,
    EXIT_EVALUATION,
    EXIT_INFEASIBLE,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    cli_main,
)
from proxal.errors import ConfigError
from proxal.solver import SolverConfig, proximal_al_solve

SPHERE = {"name": "sphere_linear", "params": {"n": 2, "b": [1.0, 0.0]}}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def good(tmp_path):
    return write(tmp_path / "good.json", {"problem": SPHERE, "epsilon": 1e-6, "x0": [0.0, 1.0]})


class TestConfigSchema:
    def test_defaults(self):
        cfg = harness.load_run_config({"problem": SPHERE})
        sc = cfg.solver_config()
        assert sc.rho is None and sc.eta == 2.0 and cfg.rho == "adaptive"

    def test_fixed_rho_and_beta(self):
        cfg = harness.load_run_config({"problem": SPHERE, "rho": {"fixed": 50}, "beta": 0.2})
        assert cfg.solver_config().rho == 50 and cfg.solver_config().beta == 0.2

    @pytest.mark.parametrize("bad", [
        {"unknown": 1}, {"eta": 3}, {"epsilon": -1}, {"rho": "huge"}, {"rho": {"fixed": -1}},
        {"mode": "3o"}, {"inner": {"zeta": 2}}, {"inner": {"extra": 1}}, {"seed": -5},
    ])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            harness.load_run_config({"problem": SPHERE, **bad})

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            harness.load_run_config(str(p))


class TestScalingStudyConfig:
    def test_valid(self):
        spec = harness.load_scaling_spec({"grid": [1e-2, 1e-3, 1e-4], "eta": 1})
        assert spec.expected_slope == 1.0

    @pytest.mark.parametrize("grid", [[1e-2, 1e-2, 1e-2], [1e-2, 1e-3], [1e-3, 1e-2, 1e-4], [2.0, 1.0, 0.5]])
    def test_bad_grid(self, grid):
        with pytest.raises(ConfigError):
            harness.load_scaling_spec({"grid": grid})

    def test_repetitions(self):
        with pytest.raises(ValidationError):
            harness.ScalingStudySpec(grid=[1e-1, 1e-2, 1e-3], repetitions=0)


class TestPersistence:
    def _record(self, sphere, iters=3):
        rec = proximal_al_solve(sphere, SolverConfig(1e-12, rho=10, max_outer=iters), x0=np.array([0.0, 1.0]))
        assert rec.outer_iterations == iters
        return rec

    def test_csv_rows_and_totals(self, sphere, tmp_path):
        rec = self._record(sphere)
        csv_path, json_path = harness.persist_run(rec, tmp_path, {"note": "x"})
        lines = csv_path.read_text().splitlines()
        assert lines[0] == ",".join(harness.CSV_COLUMNS) and len(lines) == 4
        rows = harness.read_csv_rows(csv_path)
        summary = harness.load_run_summary(json_path)
        assert summary["totals"]["outer_iterations"] == len(rows)
        assert summary["totals"]["inner_iterations"] == sum(int(r["inner_iters"]) for r in rows)
        assert summary["totals"]["hvp_count"] == sum(int(r["hvp_count"]) for r in rows)

    def test_floats_round_trip_exactly(self, sphere, tmp_path):
        rec = self._record(sphere)
        csv_path, _ = harness.persist_run(rec, tmp_path)
        rows = harness.read_csv_rows(csv_path)
        assert [float(r["P_k"]) for r in rows] == [s.P for s in rec.iterations]

    def test_json_round_trip(self, sphere, tmp_path):
        rec = self._record(sphere)
        summary = harness.run_summary(rec, {"a": 1})
        _, json_path = harness.persist_run(rec, tmp_path, {"a": 1})
        assert harness.load_run_summary(json_path) == json.loads(json.dumps(summary))
        loaded = harness.load_run_summary(json_path)
        assert loaded["x"] == [float(v) for v in rec.x] and loaded["seed"] == rec.seed

    def test_unwritable(self, sphere, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            harness.persist_run(self._record(sphere, 1), blocker / "sub")


def test_fit_log_slope():
    eps = [1e-1, 1e-2, 1e-3]
    assert harness.fit_log_slope(eps, [10, 100, 1000]) == pytest.approx(1.0)
    assert harness.fit_log_slope(eps, [4, 4, 4]) == pytest.approx(0.0, abs=1e-12)


class TestScalingStudy:
    def test_eta_two_bounded(self):
        spec = harness.ScalingStudySpec(grid=[1e-2, 1e-3, 1e-4, 1e-5], eta=2, x0=[0.0, 1.0])
        rep = harness.scaling_study(spec)
        assert rep["passed"] and rep["slope"] <= 0.3 and rep["max_T"] <= 50

    def test_fixed_rho_and_repetitions(self):
        spec = harness.ScalingStudySpec(grid=[1e-2, 1e-3, 1e-4], eta=1, rho=100.0, repetitions=2)
        rep = harness.scaling_study(spec)
        assert len(rep["cells"]) == 6 and rep["rho"] == 100.0
        assert [c["epsilon"] for c in rep["cells"]] == [1e-2, 1e-2, 1e-3, 1e-3, 1e-4, 1e-4]

    def test_failed_cell_reported(self):
        spec = harness.ScalingStudySpec(grid=[1e-2, 1e-3, 1e-4], eta=0, rho=1e-4, max_outer=2)
        rep = harness.scaling_study(spec)
        assert not rep["passed"] and rep["failures"][0]["epsilon"] == 1e-2


class TestCli:
    def test_solve_writes_outputs(self, good, tmp_path):
        out = tmp_path / "out"
        assert cli_main(["solve", "--config", good, "--out", str(out)]) == EXIT_OK
        assert (out / "run.csv").exists() and (out / "run.json").exists()
        summary = json.loads((out / "run.json").read_text())
        assert summary["status"] == "converged_1o" and summary["config"]["epsilon"] == 1e-6

    def test_flags_override(self, good, tmp_path):
        out = tmp_path / "o"
        code = cli_main(["solve", "--config", good, "--out", str(out), "--seed", "7", "--mode", "2o", "--rho", "100"])
        assert code == EXIT_OK
        summary = json.loads((out / "run.json").read_text())
        assert summary["seed"] == 7 and summary["rho"] == 100.0 and summary["status"] == "converged_2o"

    def test_check_kkt(self, tmp_path, capsys):
        point = write(tmp_path / "kkt.json", {"x": [-1.0, 0.0], "lambda": [0.5], "epsilon": 1e-6, "problem": SPHERE})
        assert cli_main(["check", "--point", point]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["is_2o"] is True

    def test_check_with_config_and_estimate(self, good, tmp_path, capsys):
        point = write(tmp_path / "p.json", {"x": [1.0, 0.0], "epsilon": 0.5})
        assert cli_main(["check", "--point", point, "--config", good]) == EXIT_OK
        cert = json.loads(capsys.readouterr().out)
        assert cert["lambda"] == pytest.approx([-0.5]) and cert["is_2o"] is False

    def test_check_bad_point(self, tmp_path):
        point = write(tmp_path / "p.json", {"x": [1.0, 0.0], "epsilon": 0.5, "bogus": 1, "problem": SPHERE})
        assert cli_main(["check", "--point", point]) == EXIT_CONFIG

    def test_check_rank_deficient(self, tmp_path):
        point = write(tmp_path / "p.json", {"x": [0.0, 0.0], "epsilon": 0.5, "problem": SPHERE})
        assert cli_main(["check", "--point", point]) == EXIT_EVALUATION

    def test_eta_out_of_range(self, tmp_path, capsys):
        bad = write(tmp_path / "bad.json", {"problem": SPHERE, "eta": 3})
        assert cli_main(["solve", "--config", bad]) == EXIT_CONFIG
        assert "valid range [0, 2]" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path):
        bad = write(tmp_path / "bad.json", {"problem": SPHERE, "epsilonn": 0.1})
        assert cli_main(["solve", "--config", bad]) == EXIT_CONFIG

    def test_unknown_problem(self, tmp_path):
        bad = write(tmp_path / "bad.json", {"problem": {"name": "nope"}})
        assert cli_main(["solve", "--config", bad, "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_bad_flag(self, good):
        assert cli_main(["solve", "--config", good, "--rho", "-3"]) == EXIT_CONFIG
        assert cli_main(["frobnicate"]) == EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        assert cli_main(["solve", "--config", str(tmp_path / "none.json")]) == EXIT_EVALUATION

    def test_not_converged(self, tmp_path):
        cfg = write(tmp_path / "c.json", {"problem": SPHERE, "epsilon": 1e-8, "eta": 0,
                                          "rho": {"fixed": 0.01}, "max_outer": 2})
        assert cli_main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_NOT_CONVERGED

    def test_evaluation_failure(self, tmp_path):
        from proxal.problems import make_sphere_linear, register_problem

        def factory():
            base = make_sphere_linear(2, np.array([1.0, 0.0]))
            from dataclasses import replace

            return replace(base, f=lambda x: float("nan"))

        register_problem("nan_objective", factory)
        cfg = write(tmp_path / "c.json", {"problem": {"name": "nan_objective"}, "rho": {"fixed": 10}})
        assert cli_main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_EVALUATION

    def test_infeasible(self, tmp_path):
        cfg = write(tmp_path / "c.json", {"problem": {"name": "infeasible_demo"}, "epsilon": 1e-4})
        assert cli_main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_INFEASIBLE
        assert cli_main(["phase1", "--config", cfg, "--out", str(tmp_path)]) == EXIT_INFEASIBLE

    def test_phase1_feasible(self, tmp_path, capsys):
        cfg = write(tmp_path / "c.json", {"problem": SPHERE, "epsilon": 1e-4, "x0": [2.0, 0.0]})
        assert cli_main(["phase1", "--config", cfg, "--phase1-rho", "100"]) == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert out["feasible"] and out["c_norm"] ** 2 <= 0.01

    def test_audit(self, good, tmp_path):
        out = tmp_path / "a"
        assert cli_main(["audit", "--config", good, "--out", str(out)]) == EXIT_OK
        report = json.loads((out / "run.json").read_text())["audit"]
        assert report["lyapunov_violations"] == [] and report["kkt_residual_gap"] <= 1e-9

    def test_audit_exit_code_on_violation(self, good, tmp_path, monkeypatch):
        from proxal import cli
        from proxal.solver import Violation

        monkeypatch.setattr(cli, "lyapunov_descent_audit", lambda rec, prob: [Violation(1, 1.0, 0.0)])
        assert cli_main(["audit", "--config", good, "--out", str(tmp_path)]) == EXIT_AUDIT_FAILED

    def test_scaling_study(self, tmp_path):
        spec = write(tmp_path / "s.json", {"grid": [1e-2, 1e-3, 1e-4], "eta": 2})
        assert cli_main(["scaling-study", "--config", spec, "--out", str(tmp_path)]) == EXIT_OK
        assert json.loads((tmp_path / "study.json").read_text())["passed"]
        bad = write(tmp_path / "b.json", {"grid": [1e-2, 1e-2, 1e-2]})
        assert cli_main(["scaling-study", "--config", bad]) == EXIT_CONFIG

    def test_csv_deterministic(self, good, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cli_main(["solve", "--config", good, "--out", str(a), "--seed", "3"])
        cli_main(["solve", "--config", good, "--out", str(b), "--seed", "3"])
        assert (a / "run.csv").read_bytes() == (b / "run.csv").read_bytes()
