"""The W functional on metrics and its log-coordinate form on a flat.

On a constant diagonal base metric g0 the functional is discretized with face
differences and face weights, so that the discrete Laplacian is exactly the
adjoint of the face gradient for the Omega-quadrature. The gradient and second
variation below are then exact derivatives of ``w_bold`` for commuting fields
(1D fields, or fields diagonal in a common frame).
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .algebra import (
    bracket_product,
    commutator,
    endo_exp,
    inner,
    min_eigenvalue,
    raise_index,
)
from .grid import GridDomain, PolarizationField, fd_partial, integrate_omega
from .riemann import (
    bakry_emery_ricci,
    covariant_derivative,
    laplacian_omega,
    log_density,
    ric_star_omega,
)

logger = logging.getLogger(__name__)

CONVEX_KINDS = ("delta", "plusplus", "plus", "minus")
DEFAULT_SEGMENT_POINTS = 11
DEFAULT_U_SAMPLES = 64
INCLUSION_ORDERS = (1, 2, 4, 8)
INCLUSION_TOLERANCE = 1e-12


def _bcast(weights: np.ndarray, U: np.ndarray) -> np.ndarray:
    return weights.reshape(weights.shape + (1,) * (U.ndim - weights.ndim))


@dataclass(eq=False)
class FlatLayer:
    """Discrete operators of the flat Sigma_K(g0) for a constant diagonal g0.

    Raises:
        ValueError: If g0 is not constant and diagonal.
    """

    g0: np.ndarray = field(repr=False)
    grid: GridDomain

    def __post_init__(self):
        n = self.grid.dim
        g0 = np.broadcast_to(np.asarray(self.g0, dtype=float), self.grid.shape + (n, n))
        ref = g0[(0,) * n]
        if not np.allclose(g0, ref, rtol=0, atol=1e-12):
            raise ValueError("The flat layer needs a constant base metric")
        if not np.allclose(ref, np.diag(np.diag(ref)), rtol=0, atol=1e-12):
            raise ValueError("The flat layer needs a diagonal base metric")
        if np.any(np.diag(ref) <= 0):
            raise ValueError("Base metric must be positive")
        self.g0 = np.array(g0)
        self.gamma = np.diag(ref).copy()

    @property
    def n(self) -> int:
        return self.grid.dim

    @cached_property
    def identity(self) -> np.ndarray:
        return np.broadcast_to(np.eye(self.n), self.grid.shape + (self.n, self.n))

    @cached_property
    def rho(self) -> np.ndarray:
        """Ric*_{g0}(Omega)."""
        return ric_star_omega(self.g0, self.grid)

    @cached_property
    def f0(self) -> np.ndarray:
        return log_density(self.g0, self.grid)

    @cached_property
    def face_weights(self) -> list[np.ndarray]:
        """c_a[i]: Omega-weight of the face between i and i + e_a; zero across a truncated end."""
        grid = self.grid
        out = []
        for a in range(grid.dim):
            c = grid.cell_volume * np.sqrt(grid.omega * np.roll(grid.omega, -1, axis=a))
            c = c * grid.trapezoid_factors(exclude_axis=a)
            if not grid.periodic[a]:
                idx = [slice(None)] * grid.dim
                idx[a] = -1
                c[tuple(idx)] = 0.0
            out.append(c)
        return out

    def face_differences(self, U: np.ndarray) -> list[np.ndarray]:
        return [(np.roll(U, -1, axis=a) - U) / self.grid.spacing[a] for a in range(self.n)]

    def dirichlet(self, U: np.ndarray, V: np.ndarray | None = None) -> float:
        """sum c_a gamma_a^-1 <delta_a U, delta_a V>_{g0}."""
        dU = self.face_differences(U)
        dV = dU if V is None else self.face_differences(V)
        total = 0.0
        for a in range(self.n):
            total += float(np.sum(self.face_weights[a] * inner(dU[a], dV[a], self.g0) / self.gamma[a]))
        return total

    def laplacian(self, U: np.ndarray) -> np.ndarray:
        """Delta_h, the q-weighted adjoint of the face gradient."""
        q = _bcast(self.grid.weights, U)
        out = np.zeros_like(U)
        for a in range(self.n):
            kappa = 1.0 / (self.gamma[a] * self.grid.spacing[a] ** 2)
            c = _bcast(self.face_weights[a], U)
            c_back = np.roll(c, 1, axis=a)
            out = out + kappa * (c * (U - np.roll(U, -1, axis=a)) + c_back * (U - np.roll(U, 1, axis=a)))
        return out / q

    def divergence_of_gradient(self, U: np.ndarray) -> np.ndarray:
        """div_h(delta U) through face fluxes; equals -laplacian(U)."""
        q = _bcast(self.grid.weights, U)
        out = np.zeros_like(U)
        for a, dU in enumerate(self.face_differences(U)):
            flux = _bcast(self.face_weights[a], U) * dU / self.gamma[a]
            out = out + (flux - np.roll(flux, 1, axis=a)) / self.grid.spacing[a]
        return out / q

    def integrate(self, values: np.ndarray) -> float:
        return integrate_omega(values, self.grid)

    def pairing(self, X: np.ndarray, V: np.ndarray) -> float:
        """The constant product 4 * integral <X, V>_{g0} Omega."""
        return 4.0 * self.integrate(inner(X, V, self.g0))

    def partial_stack(self, A: np.ndarray) -> list[np.ndarray]:
        return [fd_partial(A, self.grid, a) for a in range(self.n)]

    def gradient_square(self, A: np.ndarray) -> np.ndarray:
        """Tr_{g0}(nabla A nabla A) as an endomorphism: sum gamma_a^-1 (d_a A)^2."""
        return sum(dA @ dA / self.gamma[a] for a, dA in enumerate(self.partial_stack(A)))


def w_omega_metric(g: np.ndarray, grid: GridDomain) -> float:
    """W_Omega(g) = integral [Tr_g(Ric_g(Omega) - g) + 2 log(dV_g / Omega)] Omega."""
    n = grid.dim
    trace = np.trace(raise_index(g, bakry_emery_ricci(g, grid)), axis1=-2, axis2=-1)
    return integrate_omega(trace - n + 2 * log_density(g, grid), grid)


def w_bold(A: np.ndarray, layer: FlatLayer) -> float:
    """The functional in log coordinates, evaluated term by term on the grid."""
    E = endo_exp(A, layer.g0)
    potential = np.trace(E @ E @ layer.rho - 2 * A, axis1=-2, axis2=-1)
    constant = 2 * layer.f0 - layer.n
    return layer.dirichlet(E) + layer.integrate(potential) + layer.integrate(constant)


def grad_w(A: np.ndarray, layer: FlatLayer) -> np.ndarray:
    """L2 gradient of w_bold for the product 4 * integral <., .>_{g0} Omega.

    2 grad = e^A Delta_h e^A + e^{2A} Ric*_{g0}(Omega) - I.
    """
    E = endo_exp(A, layer.g0)
    return 0.5 * (E @ layer.laplacian(E) + E @ E @ layer.rho - layer.identity)


def second_variation_w(A: np.ndarray, V: np.ndarray, layer: FlatLayer) -> float:
    """d^2/ds^2 w_bold(A + sV) at s = 0 for V commuting with A."""
    E = endo_exp(A, layer.g0)
    V2 = V @ V
    kinetic = 2 * layer.dirichlet(E @ V)
    curvature = 2 * layer.integrate(np.trace(E @ layer.laplacian(E) @ V2, axis1=-2, axis2=-1))
    potential = 4 * layer.integrate(np.trace(E @ E @ layer.rho @ V2, axis1=-2, axis2=-1))
    return kinetic + curvature + potential


def metric_from_A(A: np.ndarray, g0: np.ndarray) -> np.ndarray:
    """g_A = g0 e^{-2A}."""
    return g0 @ endo_exp(-2 * A, g0)


def bracket(A: np.ndarray, B: np.ndarray, g0: np.ndarray, grid: GridDomain) -> np.ndarray:
    """{A, B}_{g0} = g0 Tr_{g0}(nabla A nabla B)."""
    dA = covariant_derivative(A, g0, grid, "ul")
    dB = dA if B is A else covariant_derivative(B, g0, grid, "ul")
    return bracket_product(dA, dB, g0)


def ric_of_A(A: np.ndarray, g0: np.ndarray, grid: GridDomain) -> np.ndarray:
    """Ric_{g_A}(Omega) = g0 Delta^Omega_{g0} A - {A, A}_{g0} + Ric_{g0}(Omega)."""
    lap = laplacian_omega(g0, A, grid, "ul")
    return g0 @ lap - bracket(A, A, g0, grid) + bakry_emery_ricci(g0, grid)


def ric_of_A_routes(A: np.ndarray, g0: np.ndarray, grid: GridDomain, mask: np.ndarray | None = None) -> dict:
    """Ric_{g_A}(Omega) three ways: directly, through the bracket and through H = e^A.

    Returns:
        Dict with the three metric fields and their pairwise relative residuals.
    """
    direct = bakry_emery_ricci(metric_from_A(A, g0), grid)
    via_bracket = ric_of_A(A, g0, grid)
    H = endo_exp(A, g0)
    Hinv = endo_exp(-A, g0)
    via_h = g0 @ (Hinv @ laplacian_omega(g0, H, grid, "ul") + ric_star_omega(g0, grid))

    def rel(x, y):
        if mask is not None:
            x, y = x[mask], y[mask]
        scale = max(float(np.max(np.abs(x))), float(np.max(np.abs(y))), 1e-12)
        return float(np.max(np.abs(x - y))) / scale

    return {
        "direct": direct,
        "bracket": via_bracket,
        "h_form": via_h,
        "direct_vs_bracket": rel(direct, via_bracket),
        "direct_vs_h_form": rel(direct, via_h),
        "bracket_vs_h_form": rel(via_bracket, via_h),
    }


@dataclass(eq=False)
class ConvexSetSpec:
    """One of the convex sets of the flat, by the inequality that defines it.

    For kind "delta" the constructor checks delta < epsilon, where epsilon is
    the smallest eigenvalue of Ric*_{g0}(Omega) on the grid interior.
    """

    kind: str
    g0: np.ndarray = field(repr=False)
    grid: GridDomain
    K: PolarizationField | None = None
    delta: float = 0.0
    u_samples: int = DEFAULT_U_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CONVEX_KINDS:
            raise ValueError(f"Unknown convex set kind '{self.kind}', expected one of {CONVEX_KINDS}")
        if self.delta < 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")
        self.layer = FlatLayer(self.g0, self.grid)
        if self.kind == "delta":
            eps = self.epsilon()
            if not self.delta < eps:
                raise ValueError(f"delta = {self.delta} must be below the Ricci lower bound {eps:.6g}")

    def epsilon(self) -> float:
        mask = self.grid.interior_mask()
        return float(np.min(min_eigenvalue(self.layer.rho, self.layer.g0)[mask]))


def _random_commuting_fields(grid: GridDomain, count: int, seed: int) -> list[np.ndarray]:
    """Smooth random endomorphisms diagonal in the coordinate frame."""
    rng = np.random.default_rng(seed)
    coords = grid.coordinates()
    n = grid.dim
    fields = []
    for _ in range(count):
        diag = []
        for _ in range(n):
            value = rng.normal()
            for c in coords:
                k = rng.integers(1, 4)
                value = value + rng.normal() * np.sin(k * c + rng.uniform(0, 2 * np.pi))
            diag.append(np.broadcast_to(value, grid.shape))
        U = np.zeros(grid.shape + (n, n))
        for i in range(n):
            U[..., i, i] = diag[i]
        fields.append(U)
    return fields


def _pointwise_margin(M: np.ndarray, layer: FlatLayer) -> float:
    return float(np.min(min_eigenvalue(M, layer.g0)))


def convex_set_membership(A: np.ndarray, spec: ConvexSetSpec) -> float:
    """Most negative eigenvalue margin of the set's defining inequality (>= 0 means member).

    For kind "plus" the margin is the larger of the sufficient pointwise
    margin and the worst of the sampled integral margins.
    """
    layer = spec.layer
    squared = layer.gradient_square(A)
    rho = layer.rho
    if spec.kind == "delta":
        return _pointwise_margin(layer.laplacian(A) - squared + rho - spec.delta * endo_exp(-2 * A, layer.g0), layer)
    if spec.kind == "minus":
        return _pointwise_margin(layer.laplacian(A) - squared + 2 * rho, layer)
    pointwise = _pointwise_margin(rho - squared, layer)
    if spec.kind == "plusplus":
        return pointwise
    worst = np.inf
    for U in _random_commuting_fields(spec.grid, spec.u_samples, spec.seed):
        U2 = U @ U
        num = layer.integrate(np.trace(U2 @ rho - U2 @ squared, axis1=-2, axis2=-1))
        den = layer.integrate(np.trace(U2, axis1=-2, axis2=-1))
        worst = min(worst, num / den)
    return max(pointwise, float(worst))


def sample_members(spec: ConvexSetSpec, count: int, amplitude: float = 0.2, seed: int = 0, max_halvings: int = 30) -> list[np.ndarray]:
    """Random commuting fields scaled into the set, halving the amplitude until they belong.

    Raises:
        ValueError: If a sample is still outside after max_halvings halvings.
    """
    members = []
    for k, U in enumerate(_random_commuting_fields(spec.grid, count, seed)):
        a = amplitude
        for _ in range(max_halvings):
            if convex_set_membership(a * U, spec) >= 0:
                members.append(a * U)
                break
            a *= 0.5
        else:
            raise ValueError(f"Sample {k} stays outside the {spec.kind} set down to amplitude {a:.3e}")
    return members


def convexity_threshold(
    profile,
    spec: ConvexSetSpec,
    lower: float = 0.5,
    upper: float = 2.0,
    xtol: float = 1e-6,
) -> float:
    """Amplitude a at which A = a * profile leaves the set, located with Brent's method.

    Raises:
        ValueError: If the margin does not change sign on [lower, upper].
    """
    profile = np.asarray(profile, dtype=float)

    def margin(a: float) -> float:
        return convex_set_membership(a * profile, spec)

    lo, hi = margin(lower), margin(upper)
    if lo < 0 or hi >= 0:
        raise ValueError(f"Margin does not change sign on [{lower}, {upper}]: {lo:.3e}, {hi:.3e}")
    return float(brentq(margin, lower, upper, xtol=xtol))


def w_lower_bound(layer: FlatLayer, eps: float) -> float:
    """2 * integral log(dV_{eps g0} / Omega) Omega, a lower bound of w_bold when Ric*_{g0}(Omega) >= eps.

    Raises:
        ValueError: If eps is not positive.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return 2 * layer.integrate(layer.f0 + 0.5 * layer.n * np.log(eps))


def inclusion_bounds(
    A: np.ndarray,
    layer: FlatLayer,
    orders: tuple[int, ...] = INCLUSION_ORDERS,
    u_samples: int = DEFAULT_U_SAMPLES,
    seed: int = 0,
) -> dict:
    """Derivative bounds of a field whose gradient is dominated by Ric*_{g0}(Omega).

    From |nabla A|^2 <= Tr Ric* pointwise follow, for every order p,
    (int |nabla A|^{2p} Omega)^{1/2p} <= (int (Tr Ric*)^p Omega)^{1/2p}, the
    p -> inf limit sup |nabla A| <= sup (Tr Ric*)^{1/2}, and
    int |U nabla A|^2 Omega <= int Tr(U^2 Ric*) Omega for commuting U.

    Returns:
        Dict with "pointwise_margin", "orders" (p -> (lhs, rhs)), "sup"
        (lhs, rhs), "weighted_margin" (worst normalized gap over the U
        samples) and "passed".
    """
    if any(p < 1 for p in orders):
        raise ValueError(f"Inclusion orders must be at least 1, got {orders}")
    squared = layer.gradient_square(A)
    grad_sq = np.clip(np.trace(squared, axis1=-2, axis2=-1), 0.0, None)
    trace_rho = np.trace(layer.rho, axis1=-2, axis2=-1)
    pointwise = float(np.min(trace_rho - grad_sq))
    bound = np.clip(trace_rho, 0.0, None)

    per_order = {}
    for p in orders:
        per_order[p] = (
            layer.integrate(grad_sq**p) ** (0.5 / p),
            layer.integrate(bound**p) ** (0.5 / p),
        )
    sup = (float(np.sqrt(np.max(grad_sq))), float(np.sqrt(np.max(bound))))

    weighted = np.inf
    for U in _random_commuting_fields(layer.grid, u_samples, seed):
        U2 = U @ U
        lhs = layer.integrate(np.trace(U2 @ squared, axis1=-2, axis2=-1))
        rhs = layer.integrate(np.trace(U2 @ layer.rho, axis1=-2, axis2=-1))
        weighted = min(weighted, (rhs - lhs) / layer.integrate(np.trace(U2, axis1=-2, axis2=-1)))

    def holds(pair):
        lhs, rhs = pair
        return lhs <= rhs * (1 + INCLUSION_TOLERANCE) + INCLUSION_TOLERANCE

    passed = (
        pointwise >= -INCLUSION_TOLERANCE
        and all(holds(pair) for pair in per_order.values())
        and holds(sup)
        and weighted >= -INCLUSION_TOLERANCE
    )
    return {
        "pointwise_margin": pointwise,
        "orders": per_order,
        "sup": sup,
        "weighted_margin": float(weighted),
        "passed": bool(passed),
    }


def segment_scan(A0: np.ndarray, A1: np.ndarray, layer: FlatLayer, points: int = DEFAULT_SEGMENT_POINTS) -> dict:
    """w_bold along A0 + t (A1 - A0) with its second differences."""
    ts = np.linspace(0.0, 1.0, points)
    values = np.array([w_bold(A0 + t * (A1 - A0), layer) for t in ts])
    second = values[2:] - 2 * values[1:-1] + values[:-2]
    return {
        "t": ts,
        "values": values,
        "second_differences": second,
        "min_second_difference": float(np.min(second)),
    }


def gradient_tangency_residual(A: np.ndarray, layer: FlatLayer, K: PolarizationField) -> float:
    """max |[K, grad w(A)]| relative to |grad w(A)|: zero when the gradient is tangent to the flat."""
    G = grad_w(A, layer)
    scale = max(float(np.max(np.abs(G))), 1e-12)
    return float(np.max(np.abs(commutator(K.K, G)))) / scale
