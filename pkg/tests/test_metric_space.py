"""Tests for metric_space module."""

import numpy as np
import pytest

from srflab.families import torus_codazzi_2d, torus_generic_2d, torus_hessian_2d
from srflab.grid import PolarizationField, torus_nd
from srflab.metric_space import (
    MetricPair,
    conservation_along_geodesic,
    curvature_M,
    dist_G_on_flat,
    equivalent_FK_check,
    flat_distance,
    g_inner,
    geodesic,
    geodesic_velocity,
    group_law_residual,
    in_F,
    in_F_K,
    in_F_infty,
    max_residual,
    triangle_inequality_gap,
)


def _diag_field(grid, *entries):
    out = np.zeros(grid.shape + (len(entries), len(entries)))
    for i, e in enumerate(entries):
        out[..., i, i] = e
    return out


@pytest.fixture
def torus():
    return torus_nd(2, 24)


@pytest.fixture
def hessian_family():
    return torus_hessian_2d(24, seed=3)


class TestGeodesics:
    """Tests for geodesics of the L2 metric."""

    def test_starts_at_base(self, torus):
        g0 = _diag_field(torus, 1.0, 2.0)
        v = _diag_field(torus, 0.3, -0.1)
        assert np.allclose(geodesic(g0, v, 0.0), g0)

    def test_group_law(self, torus):
        x, y = torus.coordinates()
        g0 = _diag_field(torus, 1.0, 2.0)
        v = _diag_field(torus, np.sin(x), np.cos(y))
        v[..., 0, 1] = v[..., 1, 0] = 0.2 * np.sin(x + y)
        assert group_law_residual(g0, v, 0.3, 0.5) < 1e-12

    def test_velocity_lift_is_constant(self, torus):
        x, y = torus.coordinates()
        g0 = _diag_field(torus, 1.0, 1.5)
        v = _diag_field(torus, 0.4 * np.sin(x), 0.2)
        v[..., 0, 1] = v[..., 1, 0] = 0.1 * np.cos(y)
        lift = np.linalg.solve(g0, v)
        assert np.allclose(geodesic_velocity(g0, v, 0.7), lift, atol=1e-6)

    def test_rejects_asymmetric_velocity(self, torus):
        g0 = _diag_field(torus, 1.0, 1.0)
        v = np.zeros_like(g0)
        v[..., 0, 1] = 1.0
        with pytest.raises(ValueError, match="symmetric"):
            geodesic(g0, v, 1.0)

    def test_inner_product_of_base_metric(self, torus):
        g0 = _diag_field(torus, 1.0, 3.0)
        assert g_inner(g0, g0, g0, torus) == pytest.approx(2 * (2 * np.pi) ** 2)


class TestCurvatureOfMetrics:
    """Tests for the curvature of the space of metrics."""

    def test_vanishes_on_commuting_directions(self, torus):
        g = _diag_field(torus, 1.0, 2.0)
        u, v, w = (_diag_field(torus, a, b) for a, b in ((1.0, 2.0), (0.5, -1.0), (3.0, 0.1)))
        assert np.allclose(curvature_M(g, u, v, w), 0.0)

    def test_nonzero_on_generic_directions(self, torus):
        g = _diag_field(torus, 1.0, 1.0)
        u = _diag_field(torus, 1.0, -1.0)
        v = np.zeros_like(g)
        v[..., 0, 1] = v[..., 1, 0] = 1.0
        assert np.max(np.abs(curvature_M(g, u, v, u))) > 0.1


class TestMembership:
    """Tests for the F, F^K and F-infinity predicates."""

    def test_every_velocity_is_in_F_in_one_dimension(self):
        grid = torus_nd(1, 32)
        (x,) = grid.coordinates()
        g = np.ones(grid.shape + (1, 1)) * (1 + 0.3 * np.cos(x))[..., None, None]
        v = np.sin(2 * x)[..., None, None]
        assert in_F(g, v, grid) == 0.0

    def test_codazzi_velocity_against_generic(self):
        codazzi = torus_codazzi_2d(64, accuracy=4)
        generic = torus_generic_2d(64, accuracy=4)
        assert in_F(generic.g0, generic.v, generic.grid) > 10 * in_F(codazzi.g0, codazzi.v, codazzi.grid)

    def test_hessian_family_is_in_F_K(self, hessian_family):
        K = PolarizationField.from_diagonal([1.0, 2.0], hessian_family.grid)
        report = in_F_K(hessian_family.g0, hessian_family.v, K, hessian_family.grid, p_max=2)
        assert len(report["K_p"]) == 3
        assert len(report["R_p"]) == 3
        assert max_residual(report) < 1e-10

    def test_equivalent_characterizations(self, hessian_family):
        K = PolarizationField.from_diagonal([1.0, 2.0], hessian_family.grid)
        first, second = equivalent_FK_check(hessian_family.g0, hessian_family.v, K, hessian_family.grid, p_max=1)
        assert max_residual(first) < 1e-10
        assert max_residual(second) < 1e-10

    def test_off_diagonal_velocity_leaves_F_K(self, torus):
        x, _ = torus.coordinates()
        g0 = _diag_field(torus, 1.0, 1.0)
        v = np.zeros_like(g0)
        v[..., 0, 1] = v[..., 1, 0] = 0.5 * np.cos(x)
        report = in_F_K(g0, v, np.diag([1.0, 2.0]), torus, p_max=1)
        assert report["K_p"][0] > 0.1

    def test_powers(self, hessian_family):
        residuals = in_F_infty(hessian_family.g0, hessian_family.v, hessian_family.grid, p_max=3)
        assert len(residuals) == 3
        assert max(residuals) < 1e-10

    def test_negative_p_max(self, hessian_family):
        with pytest.raises(ValueError, match="p_max"):
            in_F_K(hessian_family.g0, hessian_family.v, np.diag([1.0, 2.0]), hessian_family.grid, p_max=-1)


class TestFlat:
    """Tests for the flat through g0 and its distance."""

    def test_log_coordinate_round_trip(self, torus):
        x, y = torus.coordinates()
        g0 = _diag_field(torus, 1.0, 2.0)
        A = _diag_field(torus, 0.2 * np.sin(x), 0.1 * np.cos(y))
        pair = MetricPair.from_A(g0, A, torus)
        assert np.allclose(pair.A, A, atol=1e-12)
        assert pair.reconstruction_residual() < 1e-12

    def test_flat_distance(self, torus):
        g0 = _diag_field(torus, 1.0, 1.0)
        A = _diag_field(torus, 0.5, 0.0)
        zero = np.zeros_like(A)
        assert flat_distance(A, A, g0, torus) == 0.0
        assert flat_distance(A, zero, g0, torus) == pytest.approx(flat_distance(zero, A, g0, torus))
        assert flat_distance(A, zero, g0, torus) == pytest.approx(np.sqrt(4 * 0.25 * (2 * np.pi) ** 2))
        assert dist_G_on_flat(MetricPair.from_A(g0, A, torus)) == pytest.approx(flat_distance(A, zero, g0, torus))

    def test_triangle_inequality(self, torus):
        rng = np.random.default_rng(0)
        g0 = _diag_field(torus, 1.0, 2.0)
        A1, A2, A3 = (_diag_field(torus, *rng.normal(size=(2,) + torus.shape)) for _ in range(3))
        assert triangle_inequality_gap(A1, A2, A3, g0, torus) >= -1e-12


class TestConservation:
    """Tests for conserved quantities along F^K geodesics."""

    def test_product_geodesic_conserves_everything(self, hessian_family):
        K = PolarizationField.from_diagonal([1.0, 2.0], hessian_family.grid)
        rows = conservation_along_geodesic(
            hessian_family.g0, hessian_family.v, K, hessian_family.grid, [0.0, 0.5, 1.0], p_max=1
        )
        names = {r["residual_name"] for r in rows}
        assert names == {"curvature_drift", "prescattering", "velocity_derivative_drift", "membership"}
        assert len(rows) == 12
        assert max(r["value"] for r in rows) < 1e-8

    def test_without_polarization(self, hessian_family):
        rows = conservation_along_geodesic(hessian_family.g0, hessian_family.v, None, hessian_family.grid, [0.0])
        assert "membership" not in {r["residual_name"] for r in rows}
