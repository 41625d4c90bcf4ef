"""Tests for config module."""

import json
import os
from unittest.mock import patch

import numpy as np
import pytest

from srflab.config import Config, ConfigError, RunConfig
from srflab.grid import write_field_dump


def _write(tmp_path, text, name="run.json"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestConfig:
    """Tests for environment settings."""

    def test_defaults(self):
        with patch.dict(os.environ, {}, clear=True), patch("srflab.config.load_dotenv"):
            config = Config.from_env()
        assert config.output_dir == "results"
        assert config.log_level == "INFO"
        assert config.seed == 0
        assert config.write_dumps is False

    def test_values_from_env(self):
        env = {
            "SRF_OUTPUT_DIR": "out",
            "SRF_LOG_LEVEL": "debug",
            "SRF_SEED": "7",
            "SRF_WRITE_DUMPS": "yes",
        }
        with patch.dict(os.environ, env, clear=True), patch("srflab.config.load_dotenv"):
            config = Config.from_env()
        assert config.output_dir == "out"
        assert config.log_level == "DEBUG"
        assert config.seed == 7
        assert config.write_dumps is True

    def test_bad_seed(self):
        with patch.dict(os.environ, {"SRF_SEED": "abc"}, clear=True), patch("srflab.config.load_dotenv"):
            with pytest.raises(ValueError, match="SRF_SEED"):
                Config.from_env()


class TestConfigError:
    """Tests for error formatting."""

    def test_with_location(self):
        assert str(ConfigError("bad value", "run.json", 3)) == "run.json:3: bad value"

    def test_without_location(self):
        assert str(ConfigError("bad value")) == "bad value"


class TestRunConfigLoad:
    """Tests for reading run files."""

    def test_syntax_error_line(self, tmp_path):
        path = _write(tmp_path, '{\n  "seed": 1,\n  "p_max": 2\n  "output_dir": "x"\n}\n')
        with pytest.raises(ConfigError) as excinfo:
            RunConfig.load(path)
        assert excinfo.value.line == 4
        assert "Invalid JSON" in str(excinfo.value)

    def test_unknown_section_line(self, tmp_path):
        path = _write(tmp_path, '{\n  "seed": 1,\n  "mystery": {}\n}\n')
        with pytest.raises(ConfigError, match="mystery") as excinfo:
            RunConfig.load(path)
        assert excinfo.value.line == 3

    def test_bad_testbed_line(self, tmp_path):
        path = _write(tmp_path, '{\n  "testbed": {\n    "kind": "sphere"\n  }\n}\n')
        with pytest.raises(ConfigError) as excinfo:
            RunConfig.load(path)
        assert str(excinfo.value).startswith(f"{path}:3: Unknown testbed")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="Cannot read config"):
            RunConfig.load(tmp_path / "absent.json")

    def test_top_level_must_be_object(self, tmp_path):
        with pytest.raises(ConfigError, match="object"):
            RunConfig.load(_write(tmp_path, "[1, 2]"))

    def test_env_fills_missing_keys(self, tmp_path):
        path = _write(tmp_path, json.dumps({"seed": 5}))
        config = RunConfig.load(path, Config(output_dir="env_out", seed=9))
        assert config.output_dir == "env_out"
        assert config.seed == 5


class TestRunConfigValidation:
    """Tests for run settings validation."""

    def test_defaults(self):
        config = RunConfig()
        assert config.testbed["kind"] == "gaussian1d"
        assert config.dim == 1
        assert config.integrator_config().p_max == 3

    @pytest.mark.parametrize(
        "kwargs,match",
        [
            ({"testbed": {"kind": "sphere"}}, "Unknown testbed"),
            ({"testbed": {"kind": "gaussian1d", "dim": 2}}, "one dimensional"),
            ({"testbed": {"kind": "torus_nd", "dim": 4}}, "1, 2 or 3"),
            ({"testbed": {"kind": "torus_nd", "points": 4}}, "at least 8"),
            ({"omega": {"log_modes": [{"a": 0.1, "k": [1]}]}}, "torus_nd"),
            ({"initial": {"modes": [{"a": 0.1, "k": [1, 0]}]}}, "wave vector"),
            ({"initial": {"representation": "B"}}, "representation"),
            ({"testbed": {"kind": "torus_nd", "dim": 2}, "polarization": {"diagonal": [1.0, 1.0]}}, "distinct"),
            ({"polarization": {"diagonal": [1.0, 2.0]}}, "1 entries"),
            ({"convexity": {"kind": "round"}}, "convex set kind"),
            ({"integrator": {"dt": -1.0}}, "Invalid integrator settings"),
            ({"integrator": {"stepsize": 0.1}}, "Invalid integrator settings"),
            ({"suite": {"points_1d": [64, 32]}}, "Invalid suite settings"),
            ({"p_max": -1}, "p_max"),
            ({"seed": "1"}, "seed"),
        ],
    )
    def test_rejects(self, kwargs, match):
        with pytest.raises(ConfigError, match=match):
            RunConfig(**kwargs)

    def test_errors_without_source_have_no_location(self):
        with pytest.raises(ConfigError) as excinfo:
            RunConfig(testbed={"kind": "sphere"})
        assert excinfo.value.path is None
        assert excinfo.value.line is None


class TestRunConfigBuild:
    """Tests for building grids, states and sub-configs."""

    def test_torus_log_modes(self):
        config = RunConfig(
            testbed={"kind": "torus_nd", "dim": 1, "points": 16},
            omega={"log_modes": [{"a": 0.5, "k": [1]}]},
        )
        grid = config.build_grid()
        (x,) = grid.coordinates()
        assert np.allclose(grid.omega, np.exp(0.5 * np.cos(x)))

    def test_initial_modes(self):
        config = RunConfig(
            testbed={"kind": "torus_nd", "dim": 2, "points": 16},
            initial={"modes": [{"a": 0.2, "k": [1, 0], "diagonal": [1.0, 0.0]}], "representation": "A"},
        )
        grid = config.build_grid()
        x, _ = grid.coordinates()
        state = config.initial_state(grid)
        assert state.representation == "A"
        assert np.allclose(state.values[..., 0, 0], 0.2 * np.cos(x))
        assert np.allclose(state.values[..., 1, 1], 0.0)

    def test_initial_field_file_shape(self, tmp_path):
        config_grid = RunConfig(testbed={"kind": "torus_nd", "dim": 1, "points": 16}).build_grid()
        other = RunConfig(testbed={"kind": "torus_nd", "dim": 1, "points": 32}).build_grid()
        path = write_field_dump(tmp_path / "a0.bin", np.zeros(other.shape + (1, 1)), other, "h")
        config = RunConfig(testbed={"kind": "torus_nd", "dim": 1, "points": 16}, initial={"field_file": str(path)})
        with pytest.raises(ConfigError, match="expected"):
            config.initial_log(config_grid)

    def test_base_diagonal(self):
        config = RunConfig(testbed={"kind": "torus_nd", "dim": 2, "points": 8}, initial={"base_diagonal": [1.0, -1.0]})
        with pytest.raises(ConfigError, match="positive"):
            config.base_metric(config.build_grid())

    def test_polarization_field(self):
        config = RunConfig(testbed={"kind": "torus_nd", "dim": 2, "points": 8}, polarization={"diagonal": [1, 2]})
        grid = config.build_grid()
        assert np.allclose(config.polarization_field(grid).K[0, 0], np.diag([1.0, 2.0]))
        assert RunConfig().polarization_field(RunConfig().build_grid()) is None

    def test_suite_seed_follows_run_seed(self):
        assert RunConfig(seed=11).suite_config().seed == 11


class TestOverridesAndHash:
    """Tests for command line overrides and the config hash."""

    def test_overrides(self):
        config = RunConfig(integrator={"dt": 0.01})
        changed = config.with_overrides(output_dir="o", seed=3, t_end=0.5, points=64)
        assert changed.output_dir == "o"
        assert changed.seed == 3
        assert changed.integrator == {"dt": 0.01, "t_end": 0.5}
        assert changed.testbed["points"] == 64
        assert config.integrator == {"dt": 0.01}
        assert config.with_overrides() is config

    def test_hash_is_stable_and_sensitive(self, tmp_path):
        a = RunConfig(seed=1)
        b = RunConfig.load(_write(tmp_path, json.dumps({"seed": 1})))
        assert a.config_hash() == b.config_hash()
        assert len(a.config_hash()) == 64
        assert a.config_hash() != RunConfig(seed=2).config_hash()
