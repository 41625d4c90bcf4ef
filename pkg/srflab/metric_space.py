"""Geometry of the space of metrics with the L2(Omega) product.

Geodesics, the curvature of the space, the flats Sigma_K(g0) and the
membership predicates that describe them. Predicates return residuals
(max-norms of the defining quantities); callers decide on tolerances.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .algebra import commutator, endo_exp, inner, metric_log, raise_index, sym
from .functional import ConvexSetSpec, convex_set_membership
from .grid import GridDomain, PolarizationField, integrate_omega
from .riemann import (
    alt_nabla,
    bakry_emery_ricci,
    christoffel,
    covariant_derivative,
    curvature_bracket_norm,
    nabla_ladder,
    riemann_curvature,
)

logger = logging.getLogger(__name__)

DEFAULT_P_MAX = 3
SYMMETRY_TOLERANCE = 1e-10


def _max_abs(values: np.ndarray) -> float:
    return float(np.max(np.abs(values), initial=0.0))


def _polarization(K) -> np.ndarray:
    return K.K if isinstance(K, PolarizationField) else np.asarray(K, dtype=float)


def g_inner(g: np.ndarray, u: np.ndarray, v: np.ndarray, grid: GridDomain) -> float:
    """G_g(u, v) = integral Tr(g^-1 u g^-1 v) Omega."""
    pointwise = np.trace(raise_index(g, u) @ raise_index(g, v), axis1=-2, axis2=-1)
    return integrate_omega(pointwise, grid)


def _velocity_lift(g0: np.ndarray, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    scale = max(_max_abs(v), 1.0)
    if _max_abs(v - np.swapaxes(v, -1, -2)) > SYMMETRY_TOLERANCE * scale:
        raise ValueError("Geodesic velocity must be a symmetric 2-tensor")
    return raise_index(g0, v)


def geodesic(g0: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
    """g_t = g0 exp(t g0^-1 v).

    Raises:
        ValueError: If v is not symmetric, so that g0^-1 v is not g0-symmetric.
    """
    V = _velocity_lift(g0, v)
    return sym(g0 @ endo_exp(t * V, g0))


def geodesic_velocity(g0: np.ndarray, v: np.ndarray, t: float, dt: float = 1e-4) -> np.ndarray:
    """The lift g_t^-1 (d/dt) g_t, the time derivative taken by central difference."""
    gdot = (geodesic(g0, v, t + dt) - geodesic(g0, v, t - dt)) / (2 * dt)
    return raise_index(geodesic(g0, v, t), gdot)


def group_law_residual(g0: np.ndarray, v: np.ndarray, s: float, t: float) -> float:
    """max |g0^-1 g_{s+t} - (g0^-1 g_s)(g0^-1 g_t)|."""
    lhs = raise_index(g0, geodesic(g0, v, s + t))
    rhs = raise_index(g0, geodesic(g0, v, s)) @ raise_index(g0, geodesic(g0, v, t))
    return _max_abs(lhs - rhs)


def curvature_M(g: np.ndarray, u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """R(u, v) w = -1/4 g [[u*, v*], w*]."""
    us, vs, ws = (raise_index(g, x) for x in (u, v, w))
    return -0.25 * g @ commutator(commutator(us, vs), ws)


def in_F(g: np.ndarray, v: np.ndarray, grid: GridDomain) -> float:
    """max |nabla_{T_X} v*|; zero when nabla v* is 3-symmetric."""
    return _max_abs(alt_nabla(raise_index(g, v), g, grid))


def in_F_infty(g: np.ndarray, v: np.ndarray, grid: GridDomain, p_max: int = DEFAULT_P_MAX) -> list[float]:
    """max |nabla_{T_X} (v*)^p| for p = 1..p_max."""
    gamma = christoffel(g, grid)
    V = raise_index(g, v)
    power = np.broadcast_to(np.eye(grid.dim), V.shape)
    out = []
    for _ in range(p_max):
        power = power @ V
        out.append(_max_abs(alt_nabla(power, g, grid, gamma)))
    return out


def in_E(g: np.ndarray, v: np.ndarray, grid: GridDomain) -> dict[str, float]:
    """Commutators of the curvature with v* and with nabla v*."""
    gamma = christoffel(g, grid)
    R = riemann_curvature(g, grid, gamma)
    V = raise_index(g, v)
    return {
        "R_v": curvature_bracket_norm(R, V, "ul"),
        "R_nabla_v": curvature_bracket_norm(R, covariant_derivative(V, g, grid, "ul", gamma), "lul"),
    }


def in_F_K(g: np.ndarray, v: np.ndarray, K, grid: GridDomain, p_max: int = DEFAULT_P_MAX) -> dict:
    """Residuals of v in F^K_g: the F condition and [T, nabla^p v*] for T = K, R and p <= p_max.

    Returns:
        Dict with "F" (float), "K_p" and "R_p" (lists of length p_max + 1).
    """
    if p_max < 0:
        raise ValueError(f"p_max must be non-negative, got {p_max}")
    Karr = _polarization(K)
    gamma = christoffel(g, grid)
    R = riemann_curvature(g, grid, gamma)
    ladder = nabla_ladder(raise_index(g, v), g, grid, "ul", p_max, gamma)
    return {
        "F": _max_abs(alt_nabla(ladder[0], g, grid, gamma)),
        "K_p": [_max_abs(commutator(Karr, D)) for D in ladder],
        "R_p": [curvature_bracket_norm(R, D, "l" * p + "ul") for p, D in enumerate(ladder)],
    }


def equivalent_FK_check(g: np.ndarray, v: np.ndarray, K, grid: GridDomain, p_max: int = DEFAULT_P_MAX) -> tuple[dict, dict]:
    """Both characterizations of F^K_g, which must vanish together.

    The first differentiates v*, the second differentiates K and R and
    commutes them with v* itself.
    """
    first = in_F_K(g, v, K, grid, p_max)
    gamma = christoffel(g, grid)
    R = riemann_curvature(g, grid, gamma)
    V = raise_index(g, v)
    K_ladder = nabla_ladder(_polarization(K), g, grid, "ul", p_max, gamma)
    R_ladder = nabla_ladder(R, g, grid, "llul", p_max, gamma)
    second = {
        "F": first["F"],
        "K_p": [_max_abs(commutator(D, V)) for D in K_ladder],
        "R_p": [_max_abs(commutator(D, V)) for D in R_ladder],
    }
    return first, second


def max_residual(report: dict) -> float:
    """Largest entry of an in_F_K style residual dict."""
    return max([report["F"], *report["K_p"], *report["R_p"]])


def is_prescattering(g: np.ndarray, grid: GridDomain) -> float:
    """max |nabla_{T_X} Ric*_g(Omega)|."""
    return in_F(g, bakry_emery_ricci(g, grid), grid)


def is_scattering_K(g: np.ndarray, grid: GridDomain, K, p_max: int = DEFAULT_P_MAX) -> dict:
    return in_F_K(g, bakry_emery_ricci(g, grid), K, grid, p_max)


@dataclass(eq=False)
class MetricPair:
    """A metric g seen from a base metric g0 through its log coordinate A = -1/2 log(g0^-1 g)."""

    g0: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    grid: GridDomain

    @cached_property
    def A(self) -> np.ndarray:
        return metric_log(self.g0, self.g)

    def reconstruction_residual(self) -> float:
        return _max_abs(endo_exp(-2 * self.A, self.g0) - raise_index(self.g0, self.g))

    @classmethod
    def from_A(cls, g0: np.ndarray, A: np.ndarray, grid: GridDomain) -> "MetricPair":
        return cls(g0=g0, g=sym(g0 @ endo_exp(-2 * np.asarray(A, dtype=float), g0)), grid=grid)


def sigma_K_membership(pair: MetricPair, K, p_max: int = DEFAULT_P_MAX) -> dict:
    """in_F_K residuals of the initial velocity g0 (-2A) of the geodesic from g0 to g."""
    return in_F_K(pair.g0, pair.g0 @ (-2 * pair.A), K, pair.grid, p_max)


def flat_distance(A1: np.ndarray, A2: np.ndarray, g0: np.ndarray, grid: GridDomain) -> float:
    """sqrt(4 integral |A1 - A2|^2_{g0} Omega)."""
    D = np.asarray(A1) - np.asarray(A2)
    return float(np.sqrt(4 * integrate_omega(inner(D, D, g0), grid)))


def dist_G_on_flat(pair: MetricPair) -> float:
    return flat_distance(pair.A, np.zeros_like(pair.A), pair.g0, pair.grid)


def triangle_inequality_gap(A1: np.ndarray, A2: np.ndarray, A3: np.ndarray, g0: np.ndarray, grid: GridDomain) -> float:
    """Smallest of d(a, b) + d(b, c) - d(a, c) over the three orderings; negative means violated."""
    d12 = flat_distance(A1, A2, g0, grid)
    d23 = flat_distance(A2, A3, g0, grid)
    d13 = flat_distance(A1, A3, g0, grid)
    return min(d12 + d23 - d13, d12 + d13 - d23, d13 + d23 - d12)


def metric_convex_set_membership(pair: MetricPair, kind: str, delta: float = 0.0) -> float:
    """Membership margin of g in one of the convex sets of Sigma_K(g0), read through A."""
    spec = ConvexSetSpec(kind=kind, g0=pair.g0, grid=pair.grid, delta=delta)
    return convex_set_membership(pair.A, spec)


def conservation_along_geodesic(
    g0: np.ndarray,
    v: np.ndarray,
    K,
    grid: GridDomain,
    times,
    p_max: int = 1,
) -> list[dict]:
    """Quantities conserved along geodesics with F^K initial velocity.

    Returns:
        Rows of {time, residual_name, value}: curvature drift, the
        prescattering residual, drift of the covariant derivative of the
        velocity lift and, when K is given, the largest F^K residual.
    """
    V = _velocity_lift(g0, v)
    gamma0 = christoffel(g0, grid)
    R0 = riemann_curvature(g0, grid, gamma0)
    dV0 = covariant_derivative(V, g0, grid, "ul", gamma0)
    rows = []
    for t in times:
        g_t = geodesic(g0, v, t)
        gamma = christoffel(g_t, grid)
        # the velocity lift of g0 exp(tV) is V at every time
        entries = {
            "curvature_drift": _max_abs(riemann_curvature(g_t, grid, gamma) - R0),
            "prescattering": is_prescattering(g_t, grid),
            "velocity_derivative_drift": _max_abs(covariant_derivative(V, g_t, grid, "ul", gamma) - dV0),
        }
        if K is not None:
            entries["membership"] = max_residual(in_F_K(g_t, g_t @ V, K, grid, p_max))
        for name, value in entries.items():
            rows.append({"time": float(t), "residual_name": name, "value": value})
        logger.debug(f"Geodesic t={t}: {entries}")
    return rows
