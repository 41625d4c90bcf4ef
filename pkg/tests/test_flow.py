"""Tests for flow module."""

import math

import numpy as np
import pytest

from srflab.flow import (
    CflViolation,
    FlowState,
    IntegratorConfig,
    Trajectory,
    closed_form_error,
    cross_check,
    decay_check,
    flow_preserves_flat,
    heat_diagnostics,
    heat_identity_residual,
    hp_monitor,
    measured_delta,
    rhs_A,
    rhs_g,
    rhs_H,
    run_flow,
    sandwich_check,
    scheme_order,
    stationary_residual,
    step,
    w_monotonicity,
    write_trajectory_csv,
)
from srflab.functional import FlatLayer, grad_w
from srflab.grid import PolarizationField, gaussian1d, torus_nd
from srflab.report import read_csv
from srflab.verifier import refinement_slope


def _identity(grid):
    return np.broadcast_to(np.eye(grid.dim), grid.shape + (grid.dim, grid.dim)).copy()


@pytest.fixture
def circle():
    return torus_nd(1, 8)


def _flat_start(grid, representation):
    zero = np.zeros(grid.shape + (grid.dim, grid.dim))
    return FlowState.from_log(zero, _identity(grid), grid, representation)


class TestFlowState:
    """Tests for the three state representations."""

    def test_conversions_agree(self):
        grid = gaussian1d(64)
        (x,) = grid.coordinates()
        A = (0.1 * np.sin(x))[..., None, None]
        state = FlowState.from_log(A, _identity(grid), grid, "H")
        assert np.allclose(state.A, A, atol=1e-12)
        assert np.allclose(state.g[..., 0, 0], np.exp(-0.2 * np.sin(x)))
        assert np.allclose(state.as_representation("g").A, A, atol=1e-12)
        assert state.conversion_residual() < 1e-12

    def test_from_metric(self, circle):
        g = 2.0 * _identity(circle)
        state = FlowState.from_metric(g, _identity(circle), circle, "A")
        assert np.allclose(state.A, -0.5 * np.log(2.0))
        assert np.allclose(state.H, 1 / np.sqrt(2.0))

    def test_unknown_representation(self, circle):
        with pytest.raises(ValueError, match="Unknown representation"):
            FlowState(0.0, _identity(circle), _identity(circle), circle, representation="B")

    def test_wrong_shape(self, circle):
        with pytest.raises(ValueError, match="shape"):
            FlowState(0.0, np.zeros((8, 2, 2)), _identity(circle), circle)


class TestIntegratorConfig:
    """Tests for integrator settings."""

    @pytest.mark.parametrize(
        "kwargs,match",
        [
            ({"dt": 0.0}, "dt"),
            ({"scheme": "leapfrog"}, "scheme"),
            ({"t_end": -1.0}, "t_end"),
            ({"cfl_guard": 0.0}, "cfl_guard"),
            ({"diagnostics_stride": 0}, "diagnostics_stride"),
            ({"p_max": -1}, "p_max"),
        ],
    )
    def test_rejects_bad_values(self, kwargs, match):
        with pytest.raises(ValueError, match=match):
            IntegratorConfig(**kwargs)

    def test_step_plan_lands_on_t_end(self):
        assert IntegratorConfig(dt=0.3, t_end=1.0).step_plan() == (4, 0.25)
        assert IntegratorConfig(dt=0.1, t_end=0.0).step_plan() == (0, 0.1)


class TestRightHandSides:
    """Tests for the three right-hand sides and a single step."""

    @pytest.fixture
    def perturbed(self):
        grid = gaussian1d(128)
        (x,) = grid.coordinates()
        return FlowState.from_log((0.1 * np.sin(x))[..., None, None], _identity(grid), grid, "A")

    def test_log_form_is_minus_gradient(self, perturbed):
        layer = FlatLayer(perturbed.g0, perturbed.grid)
        assert np.max(np.abs(rhs_A(perturbed, layer) + grad_w(perturbed.A, layer))) < 1e-9

    def test_h_form_follows_chain_rule(self, perturbed):
        layer = FlatLayer(perturbed.g0, perturbed.grid)
        h_state = perturbed.as_representation("H")
        assert np.allclose(rhs_H(h_state, layer), h_state.H @ rhs_A(perturbed, layer), atol=1e-9)

    def test_metric_form_on_flat_circle(self, circle):
        state = _flat_start(circle, "g")
        assert np.allclose(rhs_g(state), -state.g, atol=1e-12)

    def test_euler_step(self, circle):
        config = IntegratorConfig(dt=0.1, scheme="explicit-euler")
        new = step(_flat_start(circle, "A"), config)
        assert new.t == pytest.approx(0.1)
        assert np.allclose(new.A, 0.05 * np.eye(1))


class TestClosedForm:
    """Tests on the flat circle, where g_t = exp(-t) g0."""

    @pytest.mark.parametrize("representation", ["g", "H", "A"])
    def test_rk4_matches_closed_form(self, circle, representation):
        config = IntegratorConfig(dt=0.01, t_end=1.0, p_max=1)
        trajectory = run_flow(_flat_start(circle, representation), config)
        assert trajectory.final.t == pytest.approx(1.0)
        assert closed_form_error(trajectory) < 1e-8

    def test_euler_is_first_order(self, circle):
        config = IntegratorConfig(scheme="explicit-euler", t_end=1.0, cfl_guard=10.0)
        result = scheme_order(_flat_start(circle, "g"), config)
        assert 0.8 < result["slope"] < 1.3

    def test_rk4_is_fourth_order(self, circle):
        config = IntegratorConfig(t_end=1.0, cfl_guard=10.0)
        result = scheme_order(_flat_start(circle, "g"), config)
        assert result["slope"] >= 3.8

    def test_rk4_closed_form_at_small_step(self, circle):
        trajectory = run_flow(_flat_start(circle, "H"), IntegratorConfig(dt=1e-3, t_end=1.0, diagnostics_stride=100, p_max=1))
        assert closed_form_error(trajectory) < 1e-8

    def test_monitors(self, circle):
        trajectory = run_flow(_flat_start(circle, "H"), IntegratorConfig(dt=0.05, t_end=1.0, p_max=1))
        assert w_monotonicity(trajectory)["passed"]
        sandwich = sandwich_check(trajectory)
        assert sandwich["passed"]
        assert sandwich["C"] == pytest.approx(1.0, rel=1e-8)
        hp = hp_monitor(trajectory)
        assert len(hp["rates"]) == 2
        assert hp["rates"][1] == math.inf

    def test_flat_is_preserved(self, circle):
        trajectory = run_flow(_flat_start(circle, "A"), IntegratorConfig(dt=0.1, t_end=0.5, p_max=1))
        K = PolarizationField.from_diagonal([2.0], circle)
        assert flow_preserves_flat(trajectory, K)["passed"]

    def test_trajectory_csv(self, circle, tmp_path):
        trajectory = run_flow(_flat_start(circle, "H"), IntegratorConfig(dt=0.1, t_end=0.3, p_max=2))
        meta, rows = read_csv(write_trajectory_csv(tmp_path / "trajectory.csv", trajectory, "abc"))
        assert meta["config_hash"] == "abc"
        assert len(rows) == 4
        assert {"hp_0", "hp_1", "hp_2", "w_value", "cross_form_drift"} <= set(rows[0])

    def test_diagnostics_stride(self, circle):
        config = IntegratorConfig(dt=0.1, t_end=1.0, diagnostics_stride=4, p_max=1)
        trajectory = run_flow(_flat_start(circle, "H"), config)
        assert np.allclose(trajectory.times, [0.0, 0.4, 0.8, 1.0])
        assert len(trajectory.records) == 4


class TestSoliton:
    """Tests on the Gaussian soliton."""

    def test_soliton_is_stationary(self):
        grid = gaussian1d(128)
        config = IntegratorConfig(dt=0.005, t_end=0.02, p_max=1)
        trajectory = run_flow(_flat_start(grid, "H"), config)
        assert stationary_residual(trajectory.states[0]) < 1e-8
        assert stationary_residual(trajectory.final) < 1e-8
        assert np.max(np.abs(trajectory.final.H - trajectory.states[0].H)) < 1e-10

    def test_cfl_guard(self):
        grid = gaussian1d(64)
        with pytest.raises(CflViolation) as excinfo:
            run_flow(_flat_start(grid, "H"), IntegratorConfig(dt=1.0, t_end=2.0))
        assert excinfo.value.advised_dt < 1.0
        assert excinfo.value.state.t == 0.0
        assert len(excinfo.value.trajectory.states) == 1

    def test_flat_forms_need_constant_base(self):
        grid = torus_nd(1, 16)
        (x,) = grid.coordinates()
        g0 = (1 + 0.2 * np.cos(x))[..., None, None]
        h_state = FlowState(0.0, np.ones_like(g0), g0, grid, "H")
        assert run_flow(FlowState(0.0, g0, g0, grid, "g"), IntegratorConfig(dt=0.01, t_end=0.01), diagnostics=False).final.t == pytest.approx(0.01)
        with pytest.raises(ValueError, match="constant diagonal"):
            run_flow(h_state, IntegratorConfig(dt=0.01, t_end=0.01))


class TestCrossChecks:
    """Tests comparing representations and the heat identity bookkeeping."""

    def test_representations_agree(self):
        grid = torus_nd(1, 32)
        (x,) = grid.coordinates()
        A = (0.05 * np.cos(x))[..., None, None]
        initial = FlowState.from_log(A, _identity(grid), grid, "g")
        result = cross_check(initial, IntegratorConfig(dt=0.005, t_end=0.05))
        assert set(result["pairs"]) == {"g_vs_H", "g_vs_A", "H_vs_A"}
        assert result["max_drift"] < 1e-2
        assert result["pairs"]["H_vs_A"] < 1e-6

    def test_heat_identity_needs_three_states(self, circle):
        trajectory = Trajectory(states=[_flat_start(circle, "g")])
        with pytest.raises(ValueError, match="three"):
            heat_identity_residual(trajectory)

    def test_heat_diagnostics_report(self):
        grid = torus_nd(1, 32)
        (x,) = grid.coordinates()
        A = (0.05 * np.cos(x))[..., None, None]
        trajectory = run_flow(FlowState.from_log(A, _identity(grid), grid, "g"), IntegratorConfig(dt=0.005, t_end=0.02))
        report = heat_diagnostics(trajectory)
        assert set(report) == {"delta", "identity_residual", "decay", "sandwich", "gradient_bound"}
        assert math.isfinite(report["identity_residual"])
        assert report["delta"] == min(r.min_ric_eig for r in trajectory.records)


def _sin_perturbed(points, representation):
    grid = gaussian1d(points)
    (x,) = grid.coordinates()
    return FlowState.from_log((0.1 * np.sin(x))[..., None, None], _identity(grid), grid, representation)


class TestPerturbedGaussian:
    """Tests on the Gaussian soliton perturbed by A0 = 0.1 sin x."""

    @pytest.fixture(scope="class")
    def trajectory(self):
        config = IntegratorConfig(dt=0.004, t_end=4.0, diagnostics_stride=20, p_max=2)
        return run_flow(_sin_perturbed(128, "H"), config)

    def test_reaches_t_end(self, trajectory):
        assert trajectory.final.t == pytest.approx(4.0)
        assert len(trajectory.records) == 51

    def test_pointwise_decay(self, trajectory):
        decay = decay_check(trajectory)
        assert decay["passed"]
        assert decay["delta"] == measured_delta(trajectory)
        assert decay["delta"] > 0
        assert decay["fitted_rate"] > 0

    def test_functional_decreases(self, trajectory):
        assert w_monotonicity(trajectory)["passed"]

    def test_metric_stays_sandwiched(self, trajectory):
        sandwich = sandwich_check(trajectory)
        assert sandwich["passed"]
        assert 0 < sandwich["C"] < 0.4

    def test_seminorms_decay(self, trajectory):
        hp = hp_monitor(trajectory)
        assert hp["passed"]
        assert len(hp["rates"]) == 3

    def test_forms_converge_in_h(self):
        config = IntegratorConfig(dt=0.001, t_end=0.1, diagnostics_stride=20, p_max=1)
        hs, drifts = [], []
        for points in (128, 256):
            initial = _sin_perturbed(points, "g")
            hs.append(max(initial.grid.spacing))
            drifts.append(cross_check(initial, config)["max_drift"])
        assert drifts[1] < drifts[0]
        assert refinement_slope(hs, drifts) >= 1.8
