"""Tests for grid module."""

import numpy as np
import pytest

from srflab.grid import (
    GridDomain,
    PolarizationField,
    circle_weighted,
    export_slice_csv,
    fd_partial,
    gaussian1d,
    gaussian_nd,
    integrate_omega,
    read_field_dump,
    torus_nd,
    write_field_dump,
)
from srflab.report import read_csv


@pytest.fixture
def gauss():
    return gaussian1d(256)


@pytest.fixture
def torus():
    return torus_nd(2, 32)


class TestGridDomain:
    """Tests for grid construction and validation."""

    def test_gaussian_grid_layout(self, gauss):
        assert gauss.shape == (256,)
        assert gauss.dim == 1
        assert gauss.spacing[0] == pytest.approx(16.0 / 255)
        assert gauss.periodic == (False,)
        assert gauss.label == "gaussian1d"

    def test_gaussian_total_mass(self, gauss):
        assert integrate_omega(np.ones(gauss.shape), gauss) == pytest.approx(np.sqrt(2 * np.pi), rel=1e-10)

    def test_torus_volume(self, torus):
        assert integrate_omega(np.ones(torus.shape), torus) == pytest.approx((2 * np.pi) ** 2, rel=1e-12)

    def test_omega_is_read_only(self, gauss):
        with pytest.raises(ValueError):
            gauss.omega[0] = 1.0

    def test_rejects_non_positive_omega(self):
        with pytest.raises(ValueError, match="positive"):
            GridDomain((4,), (1.0,), (0.0,), (True,), omega=np.array([1.0, 0.0, 1.0, 1.0]))

    def test_rejects_bad_accuracy(self):
        with pytest.raises(ValueError, match="accuracy"):
            torus_nd(1, 16, accuracy=3)

    def test_rejects_mismatched_spacing(self):
        with pytest.raises(ValueError, match="spacing"):
            GridDomain((4, 4), (1.0,), (0.0, 0.0), (True, True), omega=np.ones((4, 4)))

    def test_rejects_small_gaussian_box(self):
        with pytest.raises(ValueError, match="cutoff"):
            gaussian_nd(2, 32, half_width=3.0)

    def test_warns_on_heavy_boundary_density(self, caplog):
        GridDomain((8,), (0.1,), (0.0,), (False,), omega=np.ones(8), label="flatbox")
        assert "boundary terms are not negligible" in caplog.text

    def test_interior_mask(self, gauss):
        mask = gauss.interior_mask(radius=6.0)
        (x,) = gauss.coordinates()
        assert not mask[:4].any()
        assert not mask[-4:].any()
        assert np.all(np.abs(x[mask]) <= 6.0)
        assert mask[128]

    def test_interior_mask_keeps_periodic_axes(self, torus):
        assert torus.interior_mask().all()

    def test_trapezoid_factors(self, gauss):
        factors = gauss.trapezoid_factors()
        assert factors[0] == 0.5
        assert factors[-1] == 0.5
        assert factors[1] == 1.0

    def test_circle_weighted_density(self):
        grid = circle_weighted(64, amplitude=0.5)
        (x,) = grid.coordinates()
        assert grid.label == "circle_weighted"
        assert np.allclose(grid.omega, np.exp(-0.5 * np.cos(x)))


class TestFdPartial:
    """Tests for finite-difference stencils."""

    def test_periodic_first_derivative_second_order(self):
        grid = torus_nd(1, 64)
        (x,) = grid.coordinates()
        error = np.max(np.abs(fd_partial(np.sin(x), grid, 0) - np.cos(x)))
        assert error < 2e-3

    def test_periodic_first_derivative_fourth_order(self):
        grid = torus_nd(1, 64, accuracy=4)
        (x,) = grid.coordinates()
        error = np.max(np.abs(fd_partial(np.sin(x), grid, 0) - np.cos(x)))
        assert error < 1e-5

    def test_second_derivative(self):
        grid = torus_nd(1, 64, accuracy=4)
        (x,) = grid.coordinates()
        error = np.max(np.abs(fd_partial(np.sin(x), grid, 0, order=2) + np.sin(x)))
        assert error < 1e-5

    def test_truncated_axis_exact_on_quadratics(self, gauss):
        (x,) = gauss.coordinates()
        assert np.allclose(fd_partial(x**2, gauss, 0), 2 * x, atol=1e-9)
        assert np.allclose(fd_partial(x**2, gauss, 0, order=2), 2.0, atol=1e-7)

    def test_neumann_reflection_vanishes_on_even_data(self, gauss):
        (x,) = gauss.coordinates()
        d = fd_partial(np.cos(np.pi * (x + 8.0) / 16.0), gauss, 0, boundary="neumann")
        assert abs(d[0]) < 1e-12

    def test_differentiates_tensor_fields(self, torus):
        x, y = torus.coordinates()
        field = np.zeros(torus.shape + (2, 2))
        field[..., 0, 1] = np.sin(y)
        d = fd_partial(field, torus, 1)
        assert d.shape == field.shape
        assert np.allclose(d[..., 0, 0], 0.0)
        assert np.max(np.abs(d[..., 0, 1] - np.cos(y))) < 1e-2

    def test_rejects_bad_axis(self, torus):
        with pytest.raises(ValueError, match="out of range"):
            fd_partial(np.zeros(torus.shape), torus, 2)

    def test_rejects_bad_order(self, torus):
        with pytest.raises(ValueError, match="order"):
            fd_partial(np.zeros(torus.shape), torus, 0, order=3)

    def test_rejects_bad_boundary(self, torus):
        with pytest.raises(ValueError, match="boundary"):
            fd_partial(np.zeros(torus.shape), torus, 0, boundary="dirichlet")

    def test_rejects_shape_mismatch(self, torus):
        with pytest.raises(ValueError, match="grid shape"):
            fd_partial(np.zeros((3, 3)), torus, 0)


class TestIntegrateOmega:
    """Tests for weighted quadrature."""

    def test_gaussian_second_moment(self, gauss):
        (x,) = gauss.coordinates()
        assert integrate_omega(x**2, gauss) == pytest.approx(np.sqrt(2 * np.pi), rel=1e-10)

    def test_rejects_nan(self, gauss):
        values = np.ones(gauss.shape)
        values[3] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            integrate_omega(values, gauss)

    def test_rejects_tensor_field(self, torus):
        with pytest.raises(ValueError, match="scalar"):
            integrate_omega(np.zeros(torus.shape + (2,)), torus)


class TestFieldFiles:
    """Tests for field dumps and slice exports."""

    def test_dump_preserves_values_and_header(self, torus, tmp_path):
        values = np.random.default_rng(0).normal(size=torus.shape + (2, 2))
        path = write_field_dump(tmp_path / "sub" / "A.bin", values, torus, config_hash="abc")
        loaded, header = read_field_dump(path)
        assert np.array_equal(loaded, values)
        assert header["config_hash"] == "abc"
        assert header["grid"]["shape"] == [32, 32]

    def test_slice_export(self, torus, tmp_path):
        x, y = torus.coordinates()
        path = export_slice_csv(tmp_path / "slice.csv", {"u": np.sin(x) + y}, torus, axis=0, config_hash="h")
        meta, rows = read_csv(path)
        assert meta["config_hash"] == "h"
        assert len(rows) == 32
        assert list(rows[0]) == ["x", "u"]

    def test_slice_export_rejects_tensor_fields(self, torus, tmp_path):
        with pytest.raises(ValueError, match="not scalar"):
            export_slice_csv(tmp_path / "s.csv", {"g": np.zeros(torus.shape + (2, 2))}, torus)


class TestPolarizationField:
    """Tests for the polarization eigengap check."""

    def test_distinct_diagonal(self, torus):
        K = PolarizationField.from_diagonal([1.0, 2.0], torus)
        assert K.eigengap() == pytest.approx(1.0)
        assert len(K.degenerate_points()) == 0

    def test_degenerate_field_rejected(self, torus):
        with pytest.raises(ValueError, match="eigengap"):
            PolarizationField.from_diagonal([1.0, 1.0], torus)

    def test_degenerate_field_kept_when_lenient(self, torus, caplog):
        K = PolarizationField.from_diagonal([1.0, 1.0], torus, strict=False)
        assert len(K.degenerate_points()) == 32 * 32
        assert "below threshold" in caplog.text

    def test_rejects_wrong_shape(self, torus):
        with pytest.raises(ValueError, match="shape"):
            PolarizationField(np.zeros((32, 32, 3, 3)), torus)

    def test_one_dimensional_gap_is_infinite(self, gauss):
        K = PolarizationField.from_diagonal([2.0], gauss)
        assert np.isinf(K.eigengap())
