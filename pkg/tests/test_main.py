"""Tests for main module."""

import json
import os
from types import SimpleNamespace
from unittest.mock import MagicMock, patch

import pytest

from srflab.flow import CflViolation, NonFiniteState, PositivityLoss
from srflab.main import EXIT_ABORT, EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, main
from srflab.report import read_csv, write_csv


@pytest.fixture(autouse=True)
def clean_env():
    with patch.dict(os.environ, {}, clear=True), patch("srflab.config.load_dotenv"):
        yield


def _config(tmp_path, data):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def circle_run(tmp_path):
    return _config(
        tmp_path,
        {
            "testbed": {"kind": "torus_nd", "dim": 1, "points": 8},
            "integrator": {"dt": 0.1, "t_end": 0.3},
            "p_max": 1,
            "output_dir": str(tmp_path / "out"),
        },
    )


class TestConfigErrors:
    """Tests for exit code 2."""

    def test_run_needs_config(self):
        assert main(["run"]) == EXIT_CONFIG

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\n  \"seed\": \n}\n", encoding="utf-8")
        assert main(["run", "--config", str(path)]) == EXIT_CONFIG

    def test_bad_seed_in_env(self):
        with patch.dict(os.environ, {"SRF_SEED": "x"}):
            assert main(["verify"]) == EXIT_CONFIG

    def test_report_missing_directory(self, tmp_path):
        assert main(["report", "--output-dir", str(tmp_path / "absent")]) == EXIT_CONFIG


class TestRun:
    """Tests for the run command."""

    def test_flat_circle(self, circle_run, tmp_path):
        assert main(["run", "--config", str(circle_run)]) == EXIT_OK
        meta, rows = read_csv(tmp_path / "out" / "trajectory.csv")
        assert len(rows) == 4
        assert len(meta["config_hash"]) == 64
        summary = json.loads((tmp_path / "out" / "run_summary.json").read_text())
        assert summary["t_final"] == pytest.approx(0.3)
        assert summary["config_hash"] == meta["config_hash"]
        assert summary["aborted"] is False
        _, profile = read_csv(tmp_path / "out" / "final_slice.csv")
        assert len(profile) == 8

    def test_output_dir_override(self, circle_run, tmp_path):
        assert main(["run", "--config", str(circle_run), "--output-dir", str(tmp_path / "other")]) == EXIT_OK
        assert (tmp_path / "other" / "trajectory.csv").exists()

    @pytest.mark.parametrize(
        "error,abort_type",
        [
            (CflViolation("too large", SimpleNamespace(t=0.1), 1e-3), "cfl"),
            (PositivityLoss("lost", SimpleNamespace(t=0.2)), "positivity"),
            (NonFiniteState("nan", SimpleNamespace(t=0.3)), "nan"),
        ],
    )
    def test_numerical_abort(self, circle_run, tmp_path, error, abort_type):
        with patch("srflab.main.run_flow", side_effect=error):
            assert main(["run", "--config", str(circle_run)]) == EXIT_ABORT
        summary = json.loads((tmp_path / "out" / "run_summary.json").read_text())
        assert summary["aborted"] is True
        assert summary["abort_type"] == abort_type
        assert summary["t_last"] == pytest.approx(error.state.t)


class TestVerify:
    """Tests for the verify command with the suite mocked."""

    def test_pass_and_fail(self, tmp_path):
        result = MagicMock()
        result.summary = {"failures": []}
        result.passed = True
        with patch("srflab.main.run_suite", return_value=result) as run_suite:
            assert main(["verify", "--output-dir", str(tmp_path)]) == EXIT_OK
        suite_config, output_dir, config_hash = run_suite.call_args.args
        assert output_dir == str(tmp_path)
        assert len(config_hash) == 64

        result.summary = {"failures": ["ric_F: positive residual over budget"]}
        result.passed = False
        with patch("srflab.main.run_suite", return_value=result):
            assert main(["verify"]) == EXIT_ACCEPTANCE


class TestGeodesicAndConvexity:
    """Tests for the geodesic and convexity commands."""

    def test_geodesic(self, tmp_path):
        path = _config(
            tmp_path,
            {
                "testbed": {"kind": "torus_nd", "dim": 2, "points": 16},
                "initial": {"modes": [{"a": 0.2, "k": [1, 0], "diagonal": [1.0, 0.0]}]},
                "polarization": {"diagonal": [1.0, 2.0]},
                "geodesic": {"times": [0.0, 0.5, 1.0]},
                "p_max": 1,
                "output_dir": str(tmp_path / "out"),
            },
        )
        assert main(["geodesic", "--config", str(path)]) == EXIT_OK
        _, rows = read_csv(tmp_path / "out" / "geodesic_conservation.csv")
        assert len(rows) == 12
        assert json.loads((tmp_path / "out" / "geodesic_summary.json").read_text())["passed"] is True

    def test_convexity(self, tmp_path):
        path = _config(
            tmp_path,
            {
                "testbed": {"kind": "gaussian1d", "points": 128},
                "convexity": {"kind": "plusplus", "segments": 2, "points": 5, "amplitude": 0.1},
                "output_dir": str(tmp_path / "out"),
            },
        )
        assert main(["convexity", "--config", str(path)]) == EXIT_OK
        _, rows = read_csv(tmp_path / "out" / "convexity_scan.csv")
        assert len(rows) == 10
        assert rows[0]["second_difference"] == ""
        summary = json.loads((tmp_path / "out" / "convexity_summary.json").read_text())
        assert summary["inclusion_failures"] == 0
        assert summary["passed"] is True
        assert "version" in summary


class TestReport:
    """Tests for the report command."""

    def test_renders_table(self, tmp_path, capsys):
        write_csv(tmp_path / "identity_suite.csv", ["identity_id", "passed"], [{"identity_id": "a", "passed": False}], "f" * 64)
        assert main(["report", "--output-dir", str(tmp_path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "identity_suite.csv" in out
        assert "ffffffffffff" in out
