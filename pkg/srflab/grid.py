"""Rectangular grids carrying the reference volume form, stencils and quadrature.

Fields are plain numpy arrays whose leading axes are the grid axes and whose
trailing axes are tensor slots, so a metric on a 2D grid has shape
``(N0, N1, 2, 2)``.
"""

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from .report import canonical_json_bytes, write_csv

logger = logging.getLogger(__name__)

DEFAULT_OMEGA_CUTOFF = 1e-12
DEFAULT_EIGENGAP_THRESHOLD = 1e-6
BOUNDARY_MODES = (None, "neumann")


@dataclass(frozen=True, eq=False)
class GridDomain:
    """A tensor-product grid with per-axis topology and the density of Omega.

    ``omega`` is the density of the reference volume form against dx and is
    stored read-only. Truncated axes stand in for a compact manifold through a
    Gaussian tail, so the density must be negligible on their boundary layers.
    """

    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]
    periodic: tuple[bool, ...]
    omega: np.ndarray = field(repr=False)
    accuracy: int = 2
    label: str = "custom"
    omega_cutoff: float = DEFAULT_OMEGA_CUTOFF

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        dim = len(shape)
        if dim not in (1, 2, 3):
            raise ValueError(f"Grid dimension must be 1, 2 or 3, got {dim}")
        for name in ("spacing", "origin", "periodic"):
            if len(getattr(self, name)) != dim:
                raise ValueError(f"Grid {name} has {len(getattr(self, name))} entries, expected {dim}")
        spacing = tuple(float(h) for h in self.spacing)
        if any(h <= 0 for h in spacing):
            raise ValueError(f"Grid spacing must be positive, got {spacing}")
        if self.accuracy not in (2, 4):
            raise ValueError(f"Stencil accuracy must be 2 or 4, got {self.accuracy}")

        omega = np.array(self.omega, dtype=float)
        if omega.shape != shape:
            raise ValueError(f"omega has shape {omega.shape}, expected {shape}")
        if not np.all(np.isfinite(omega)) or np.any(omega <= 0):
            raise ValueError("omega density must be finite and positive at every grid point")
        omega.setflags(write=False)

        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        object.__setattr__(self, "omega", omega)

        ratio = self.boundary_omega_ratio()
        if ratio > self.omega_cutoff:
            logger.warning(
                f"Grid '{self.label}': omega on truncated boundary is {ratio:.3e} of its maximum "
                f"(cutoff {self.omega_cutoff:.1e}); boundary terms are not negligible"
            )

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_coordinates(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.shape[axis])

    def coordinates(self) -> list[np.ndarray]:
        """Coordinate arrays, one per axis, each of the grid's shape."""
        axes = [self.axis_coordinates(a) for a in range(self.dim)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def trapezoid_factors(self, exclude_axis: int | None = None) -> np.ndarray:
        """Product of per-axis trapezoid factors (1/2 on truncated endpoints)."""
        factors = np.ones(self.shape)
        for a in range(self.dim):
            if a == exclude_axis or self.periodic[a]:
                continue
            f = np.ones(self.shape[a])
            f[0] = f[-1] = 0.5
            factors = factors * f.reshape([-1 if b == a else 1 for b in range(self.dim)])
        return factors

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights of Omega: density times cell volume times trapezoid factors."""
        w = self.omega * self.cell_volume * self.trapezoid_factors()
        w.setflags(write=False)
        return w

    def boundary_omega_ratio(self) -> float:
        """Largest density on a truncated boundary layer relative to the maximum density."""
        peak = float(np.max(self.omega))
        worst = 0.0
        for a in range(self.dim):
            if self.periodic[a]:
                continue
            moved = np.moveaxis(self.omega, a, 0)
            worst = max(worst, float(np.max(moved[0])), float(np.max(moved[-1])))
        return worst / peak

    def interior_mask(self, radius: float | None = None, margin: int = 4) -> np.ndarray:
        """Points away from truncated boundaries.

        Args:
            radius: If given, also require |x_a| <= radius on every truncated axis.
            margin: Number of layers dropped at each truncated end.

        Returns:
            Boolean array of the grid's shape.
        """
        mask = np.ones(self.shape, dtype=bool)
        coords = self.coordinates() if radius is not None else None
        for a in range(self.dim):
            if self.periodic[a]:
                continue
            keep = np.zeros(self.shape[a], dtype=bool)
            keep[margin:self.shape[a] - margin] = True
            mask &= keep.reshape([-1 if b == a else 1 for b in range(self.dim)])
            if coords is not None:
                mask &= np.abs(coords[a]) <= radius
        return mask

    def metadata(self) -> dict:
        return {
            "label": self.label,
            "shape": list(self.shape),
            "spacing": list(self.spacing),
            "origin": list(self.origin),
            "periodic": list(self.periodic),
            "accuracy": self.accuracy,
        }

    def with_accuracy(self, accuracy: int) -> "GridDomain":
        return replace(self, accuracy=accuracy)


def _per_axis(value, dim: int) -> tuple:
    if np.ndim(value) == 0:
        return (value,) * dim
    value = tuple(value)
    if len(value) != dim:
        raise ValueError(f"Expected {dim} per-axis values, got {len(value)}")
    return value


def gaussian1d(points: int = 256, half_width: float = 8.0, accuracy: int = 2) -> GridDomain:
    """The 1D Gaussian soliton testbed: Omega = exp(-x^2/2) dx on [-L, L]."""
    return gaussian_nd(1, points, half_width, accuracy)


def gaussian_nd(
    dim: int,
    points: int | tuple[int, ...] = 64,
    half_width: float | tuple[float, ...] = 8.0,
    accuracy: int = 2,
) -> GridDomain:
    """Truncated Gaussian box with Omega = exp(-|x|^2/2) dx.

    Raises:
        ValueError: If the box is too small for the density to fall below the cutoff.
    """
    shape = tuple(int(n) for n in _per_axis(points, dim))
    widths = tuple(float(w) for w in _per_axis(half_width, dim))
    spacing = tuple(2 * w / (n - 1) for w, n in zip(widths, shape))
    origin = tuple(-w for w in widths)
    axes = [o + h * np.arange(n) for o, h, n in zip(origin, spacing, shape)]
    coords = np.meshgrid(*axes, indexing="ij")
    omega = np.exp(-0.5 * sum(c**2 for c in coords))
    tail = np.exp(-0.5 * min(widths) ** 2)
    if tail > DEFAULT_OMEGA_CUTOFF:
        raise ValueError(
            f"Gaussian box half width {min(widths)} leaves boundary density {tail:.3e} "
            f"above cutoff {DEFAULT_OMEGA_CUTOFF:.1e}"
        )
    return GridDomain(
        shape=shape,
        spacing=spacing,
        origin=origin,
        periodic=(False,) * dim,
        omega=omega,
        accuracy=accuracy,
        label=f"gaussian{dim}d",
    )


def torus_nd(
    dim: int,
    points: int | tuple[int, ...] = 64,
    omega: np.ndarray | None = None,
    accuracy: int = 2,
) -> GridDomain:
    """Flat torus of period 2*pi per axis. Omega defaults to dx."""
    shape = tuple(int(n) for n in _per_axis(points, dim))
    spacing = tuple(2 * np.pi / n for n in shape)
    if omega is None:
        omega = np.ones(shape)
    return GridDomain(
        shape=shape,
        spacing=spacing,
        origin=(0.0,) * dim,
        periodic=(True,) * dim,
        omega=omega,
        accuracy=accuracy,
        label=f"torus{dim}d",
    )


def circle_weighted(points: int = 128, amplitude: float = 1.0, accuracy: int = 2) -> GridDomain:
    """Circle with Omega = exp(-a cos x) dx, whose weighted Ricci curvature is -a cos x."""
    x = 2 * np.pi / points * np.arange(points)
    grid = torus_nd(1, points, omega=np.exp(-amplitude * np.cos(x)), accuracy=accuracy)
    return replace(grid, label="circle_weighted")


def _central_stencil(ext: np.ndarray, h: float, order: int, accuracy: int) -> np.ndarray:
    """Central stencil along axis 0 of an array padded by accuracy // 2 on each side."""
    if accuracy == 2:
        if order == 1:
            return (ext[2:] - ext[:-2]) / (2 * h)
        return (ext[2:] - 2 * ext[1:-1] + ext[:-2]) / h**2
    if order == 1:
        return (-ext[4:] + 8 * ext[3:-1] - 8 * ext[1:-3] + ext[:-4]) / (12 * h)
    return (-ext[4:] + 16 * ext[3:-1] - 30 * ext[2:-2] + 16 * ext[1:-3] - ext[:-4]) / (12 * h**2)


def _truncated_stencil(f: np.ndarray, h: float, order: int, accuracy: int) -> np.ndarray:
    n = f.shape[0]
    if n < 2 + accuracy:
        raise ValueError(f"Truncated axis needs at least {2 + accuracy} points, got {n}")
    if order == 1:
        out = np.gradient(f, h, axis=0, edge_order=2)
    else:
        out = np.empty_like(f)
        out[1:-1] = _central_stencil(f, h, 2, 2)
        out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2
        out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h**2
    if accuracy == 4:
        out[2:-2] = _central_stencil(f, h, order, 4)
    return out


def fd_partial(
    values: np.ndarray,
    grid: GridDomain,
    axis: int,
    order: int = 1,
    accuracy: int | None = None,
    boundary: str | None = None,
) -> np.ndarray:
    """Finite-difference partial derivative of any field along one grid axis.

    Args:
        values: Field with the grid's shape as leading axes.
        grid: The grid the field lives on.
        axis: Grid axis to differentiate along.
        order: 1 or 2.
        accuracy: Stencil order 2 or 4; defaults to the grid's.
        boundary: None for one-sided stencils on truncated axes, or
            "neumann" for even reflection (zero normal derivative).

    Returns:
        Array of the same shape as values.

    Raises:
        ValueError: On an axis out of range, a bad order or a shape mismatch.
    """
    if not 0 <= axis < grid.dim:
        raise ValueError(f"Axis {axis} out of range for a {grid.dim}D grid")
    if order not in (1, 2):
        raise ValueError(f"Derivative order must be 1 or 2, got {order}")
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"Unknown boundary mode '{boundary}'")
    values = np.asarray(values, dtype=float)
    if values.shape[:grid.dim] != grid.shape:
        raise ValueError(f"Field shape {values.shape} does not start with grid shape {grid.shape}")
    accuracy = accuracy or grid.accuracy
    h = grid.spacing[axis]

    f = np.moveaxis(values, axis, 0)
    k = accuracy // 2
    pad = [(k, k)] + [(0, 0)] * (f.ndim - 1)
    if grid.periodic[axis]:
        out = _central_stencil(np.pad(f, pad, mode="wrap"), h, order, accuracy)
    elif boundary == "neumann":
        out = _central_stencil(np.pad(f, pad, mode="reflect"), h, order, accuracy)
    else:
        out = _truncated_stencil(f, h, order, accuracy)
    return np.moveaxis(out, 0, axis)


def integrate_omega(values: np.ndarray, grid: GridDomain) -> float:
    """Integral of a scalar field against Omega.

    Raises:
        ValueError: If the field is not finite or not scalar on this grid.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"Expected a scalar field of shape {grid.shape}, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("Field contains NaN or infinite values")
    return float(np.sum(values * grid.weights))


def write_field_dump(
    path: str | Path,
    values: np.ndarray,
    grid: GridDomain,
    config_hash: str = "",
    version: str = __version__,
) -> Path:
    """Write a field as an 8-byte header length, a JSON header and little-endian doubles."""
    values = np.ascontiguousarray(values, dtype="<f8")
    header = canonical_json_bytes(
        {
            "shape": list(values.shape),
            "dtype": "<f8",
            "grid": grid.metadata(),
            "config_hash": config_hash,
            "version": version,
        }
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(values.tobytes())
    logger.debug(f"Dumped field {values.shape} to {path}")
    return path


def read_field_dump(path: str | Path) -> tuple[np.ndarray, dict]:
    """Read a field written by write_field_dump.

    Returns:
        Tuple of (array, header dict).
    """
    with open(path, "rb") as fh:
        (length,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(length).decode("utf-8"))
        data = fh.read()
    array = np.frombuffer(data, dtype=header["dtype"]).reshape(header["shape"]).copy()
    return array, header


def export_slice_csv(
    path: str | Path,
    fields: dict[str, np.ndarray],
    grid: GridDomain,
    axis: int = 0,
    config_hash: str = "",
) -> Path:
    """Export scalar fields along one axis, through the grid centre on the other axes."""
    if not 0 <= axis < grid.dim:
        raise ValueError(f"Axis {axis} out of range for a {grid.dim}D grid")
    index = tuple(slice(None) if a == axis else grid.shape[a] // 2 for a in range(grid.dim))
    x = grid.axis_coordinates(axis)
    columns = ["x"] + list(fields)
    sliced = {name: np.asarray(v)[index] for name, v in fields.items()}
    for name, v in sliced.items():
        if v.shape != x.shape:
            raise ValueError(f"Field '{name}' is not scalar on this grid")
    rows = [{"x": x[i], **{name: v[i] for name, v in sliced.items()}} for i in range(len(x))]
    return write_csv(path, columns, rows, config_hash)


@dataclass(frozen=True, eq=False)
class PolarizationField:
    """An endomorphism field with pointwise distinct real eigenvalues.

    With ``strict`` a degenerate field is rejected; otherwise the degenerate
    points are logged and kept.
    """

    K: np.ndarray = field(repr=False)
    grid: GridDomain
    threshold: float = DEFAULT_EIGENGAP_THRESHOLD
    strict: bool = True

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        n = self.grid.dim
        if K.shape != self.grid.shape + (n, n):
            raise ValueError(f"Polarization has shape {K.shape}, expected {self.grid.shape + (n, n)}")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

        gap = self.eigengap()
        if gap <= self.threshold:
            count = len(self.degenerate_points())
            msg = f"Polarization eigengap {gap:.3e} below threshold {self.threshold:.1e} at {count} points"
            if self.strict:
                raise ValueError(msg)
            logger.warning(msg)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.linalg.eigvals(self.K).real, axis=-1)

    def pointwise_gap(self) -> np.ndarray:
        if self.grid.dim == 1:
            return np.full(self.grid.shape, np.inf)
        return np.min(np.diff(self.eigenvalues, axis=-1), axis=-1)

    def eigengap(self) -> float:
        return float(np.min(self.pointwise_gap()))

    def degenerate_points(self) -> np.ndarray:
        """Grid indices where the eigengap is at or below the threshold."""
        return np.argwhere(self.pointwise_gap() <= self.threshold)

    @classmethod
    def from_diagonal(cls, values, grid: GridDomain, **kwargs) -> "PolarizationField":
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.dim,):
            raise ValueError(f"Expected {grid.dim} diagonal values, got {values.shape}")
        K = np.broadcast_to(np.diag(values), grid.shape + (grid.dim, grid.dim)).copy()
        return cls(K=K, grid=grid, **kwargs)
