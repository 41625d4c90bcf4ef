"""Smooth one-parameter families of metrics used to exercise variation formulas.

Random ingredients are band-limited (a few low Fourier modes) and drawn from
a seeded generator, so the same family can be rebuilt on a finer grid.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .algebra import raise_index, sym
from .grid import GridDomain, gaussian1d, torus_nd
from .metric_space import geodesic

logger = logging.getLogger(__name__)

FAMILY_KINDS = ("line", "geodesic", "constant")
MAX_MODES = 4


@dataclass(eq=False)
class MetricFamily:
    """t -> g_t through g0 with initial velocity v.

    ``in_F`` records whether v is known to lie in F_{g0}, which decides
    whether a restricted variation formula is a positive or a negative control.
    """

    name: str
    grid: GridDomain
    g0: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    kind: str = "line"
    in_F: bool = False

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"Unknown family kind '{self.kind}', expected one of {FAMILY_KINDS}")
        if self.kind == "constant":
            self.v = np.zeros_like(self.g0)

    def at(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return self.g0
        if self.kind == "geodesic":
            return geodesic(self.g0, self.v, t)
        return self.g0 + t * self.v

    def velocity(self, t: float = 0.0) -> np.ndarray:
        if self.kind == "geodesic":
            return sym(self.at(t) @ raise_index(self.g0, self.v))
        return self.v

    def velocity_lift(self, t: float = 0.0) -> np.ndarray:
        return raise_index(self.at(t), self.velocity(t))

    def time_derivative(self, fn, dt: float, t: float = 0.0) -> np.ndarray:
        """Central difference of fn(g_t) at t."""
        return (fn(self.at(t + dt)) - fn(self.at(t - dt))) / (2 * dt)

    @property
    def h(self) -> float:
        return min(self.grid.spacing)


def band_limited(grid: GridDomain, rng: np.random.Generator, amplitude: float = 1.0, modes: int = MAX_MODES) -> np.ndarray:
    """Random scalar field built from at most ``modes`` low Fourier modes."""
    coords = grid.coordinates()
    value = np.zeros(grid.shape)
    for _ in range(modes):
        phase = rng.uniform(0, 2 * np.pi)
        arg = sum(int(rng.integers(0, 3)) * c for c in coords)
        value = value + rng.normal() * np.cos(arg + phase)
    return amplitude * value / modes


def symmetric_field(grid: GridDomain, rng: np.random.Generator, amplitude: float = 1.0) -> np.ndarray:
    n = grid.dim
    S = np.zeros(grid.shape + (n, n))
    for i in range(n):
        for j in range(i, n):
            S[..., i, j] = S[..., j, i] = band_limited(grid, rng, amplitude)
    return S


def _identity(grid: GridDomain) -> np.ndarray:
    return np.broadcast_to(np.eye(grid.dim), grid.shape + (grid.dim, grid.dim)).copy()


def gaussian_geodesic_1d(points: int = 128, accuracy: int = 2, amplitude: float = 0.2) -> MetricFamily:
    """Geodesic through the 1D Gaussian soliton with v = phi g0; every family is in F in 1D."""
    grid = gaussian1d(points, accuracy=accuracy)
    (x,) = grid.coordinates()
    phi = amplitude * (np.sin(x) + 0.5 * np.cos(2 * x))
    g0 = _identity(grid)
    return MetricFamily("gauss1d", grid, g0, phi[..., None, None] * g0, kind="geodesic", in_F=True)


def _weighted_torus(points: int, accuracy: int, rng: np.random.Generator, weight: float) -> GridDomain:
    base = torus_nd(2, points, accuracy=accuracy)
    return torus_nd(2, points, omega=np.exp(band_limited(base, rng, weight)), accuracy=accuracy)


def torus_generic_2d(points: int = 32, accuracy: int = 2, amplitude: float = 0.1, seed: int = 0) -> MetricFamily:
    """Curved metric on a weighted 2-torus and a random velocity outside F."""
    rng = np.random.default_rng(seed)
    grid = _weighted_torus(points, accuracy, rng, 0.5)
    g0 = _identity(grid) + symmetric_field(grid, rng, 0.3)
    v = symmetric_field(grid, rng, amplitude)
    return MetricFamily("generic2d", grid, g0, v, kind="line", in_F=False)


def torus_codazzi_2d(points: int = 32, accuracy: int = 2, amplitude: float = 0.1, seed: int = 0) -> MetricFamily:
    """Warped product dx^2 + e^{2w(x)} dy^2 with the Codazzi velocity lift diag(c, c + e^{-w}).

    The lift has a 3-symmetric covariant derivative, so the family starts in
    F on a curved metric whose curvature does not commute with it.
    """
    rng = np.random.default_rng(seed)
    grid = _weighted_torus(points, accuracy, rng, 0.5)
    x, _ = grid.coordinates()
    w = 0.4 * np.sin(x) + 0.2 * np.cos(2 * x + rng.uniform(0, 2 * np.pi))
    c = 0.5
    g0 = np.zeros(grid.shape + (2, 2))
    g0[..., 0, 0] = 1.0
    g0[..., 1, 1] = np.exp(2 * w)
    V = np.zeros_like(g0)
    V[..., 0, 0] = c
    V[..., 1, 1] = c + np.exp(-w)
    return MetricFamily("warped2d", grid, g0, amplitude * (g0 @ V), kind="line", in_F=True)


def torus_hessian_2d(points: int = 32, accuracy: int = 2, amplitude: float = 0.1, seed: int = 0) -> MetricFamily:
    """Geodesic from the flat torus along v = Hess(a(x) + b(y)).

    The velocity lift is diagonal and stays in F^K for diagonal K along the
    whole geodesic, whose metrics remain flat products.
    """
    rng = np.random.default_rng(seed)
    grid = torus_nd(2, points, accuracy=accuracy)
    x, y = grid.coordinates()
    k1, k2 = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
    v = np.zeros(grid.shape + (2, 2))
    v[..., 0, 0] = -amplitude * np.cos(k1 * x + p1)
    v[..., 1, 1] = -amplitude * np.cos(k2 * y + p2)
    return MetricFamily("hessian2d", grid, _identity(grid), v, kind="geodesic", in_F=True)


def constant_family(grid: GridDomain, g0: np.ndarray | None = None) -> MetricFamily:
    g0 = _identity(grid) if g0 is None else g0
    return MetricFamily("constant", grid, g0, np.zeros_like(g0), kind="constant", in_F=True)


def fixed_endomorphism(grid: GridDomain, seed: int = 1, amplitude: float = 0.3) -> np.ndarray:
    """A smooth coordinate-symmetric endomorphism field near diag(1, 2, ..)."""
    rng = np.random.default_rng(seed)
    return np.diag(np.arange(1.0, grid.dim + 1)) + symmetric_field(grid, rng, amplitude)


def commuting_exponential(grid: GridDomain, amplitude: float = 0.5) -> np.ndarray:
    """B = e^{phi} I, whose derivatives commute with it."""
    phi = amplitude * np.sin(grid.coordinates()[0])
    return np.exp(phi)[..., None, None] * _identity(grid)


def rotated_exponential_2d(grid: GridDomain, amplitude: float = 0.5) -> np.ndarray:
    """B = Q(theta) diag(e^a, e^-a) Q(theta)^T with a position dependent angle; [B, dB] != 0."""
    if grid.dim != 2:
        raise ValueError("rotated_exponential_2d needs a 2D grid")
    x, y = grid.coordinates()
    theta = amplitude * (np.sin(x) + np.cos(y))
    a = 0.5 + 0.2 * np.cos(x)
    Q = np.zeros(grid.shape + (2, 2))
    Q[..., 0, 0] = Q[..., 1, 1] = np.cos(theta)
    Q[..., 0, 1] = -np.sin(theta)
    Q[..., 1, 0] = np.sin(theta)
    D = np.zeros_like(Q)
    D[..., 0, 0] = np.exp(a)
    D[..., 1, 1] = np.exp(-a)
    return Q @ D @ np.swapaxes(Q, -1, -2)


def random_endo_samples(grid: GridDomain, count: int, seed: int = 0, amplitude: float = 1.0) -> list[np.ndarray]:
    """Band-limited symmetric endomorphism fields for interpolation constants."""
    rng = np.random.default_rng(seed)
    return [symmetric_field(grid, rng, amplitude) for _ in range(count)]
