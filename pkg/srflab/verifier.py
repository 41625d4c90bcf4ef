"""Finite-difference certification of the variation formulas.

Each ``verify_*`` function evaluates both sides of one or more identities on
a metric family and returns one IdentityReport per identity form. Whether a
report is a positive or a negative control depends on whether the family
satisfies the identity's hypothesis; run_suite pairs the two resolutions,
fits refinement slopes and applies the pass rules.
"""

import itertools
import logging
import math
import string
from dataclasses import dataclass, field

import numpy as np

from .algebra import (
    alt,
    circledstar,
    commutator,
    contract_endo,
    endo_log,
    expand_like,
    g_transpose,
    hat_neg,
    inv_metric,
    left_product,
    raise_index,
    right_product,
    star_endo,
    tensor_norm_sq,
)
from .families import (
    MetricFamily,
    band_limited,
    commuting_exponential,
    constant_family,
    fixed_endomorphism,
    gaussian_geodesic_1d,
    random_endo_samples,
    rotated_exponential_2d,
    torus_codazzi_2d,
    torus_generic_2d,
)
from .flow import FlowState, IntegratorConfig, run_flow
from .grid import GridDomain, gaussian1d, integrate_omega, torus_nd
from .report import write_csv, write_json
from .riemann import (
    IdentitySides,
    adjoint_nabla_omega,
    alt_nabla,
    bakry_emery_ricci,
    christoffel,
    commutator_nabla_laplacian,
    covariant_derivative,
    d_operator,
    div_underline_omega,
    endo_div_formula,
    grad_log_density,
    laplacian_omega,
    nabla_ladder,
    nabla_p,
    nabla_star,
    om_contracted_bianchi,
    ric_star_omega,
    ricci,
    riemann_curvature,
    weitzenbock_tx,
)

logger = logging.getLogger(__name__)

_LETTERS = string.ascii_letters
DIAGNOSTIC_RADIUS = 6.0
ZERO_RESIDUAL = 1e-12
HYPOTHESIS_TOLERANCE = 1e-10
MIN_SLOPE = 1.8
# positive controls at or below this level are exact up to rounding; no slope is required
ROUNDOFF_RESIDUAL = 1e-9
STABILITY_TOLERANCE = 0.05
FLOW_SAMPLE_T_END = 1.0
FLOW_SAMPLE_DT = 1e-3
CONTROL_TYPES = ("positive", "negative")
SUITE_COLUMNS = ["identity_id", "instance", "h", "dt", "residual", "slope", "control_type", "passed"]
HAMILTON_COLUMNS = ["inequality", "instance", "h", "constant", "relative_change", "passed"]


@dataclass
class IdentityReport:
    """One identity evaluated on one family at one resolution."""

    identity_id: str
    instance: str
    control_type: str
    lhs_norm: float
    rhs_norm: float
    residual: float
    h: float
    dt: float
    hypothesis: float = 0.0
    slope: float | None = None
    passed: bool | None = None
    sides: IdentitySides | None = field(default=None, repr=False)
    mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.control_type not in CONTROL_TYPES:
            raise ValueError(f"Unknown control type: {self.control_type}")

    def recompute(self) -> float:
        if self.sides is None:
            raise ValueError(f"Report {self.identity_id}/{self.instance} carries no sides")
        return self.sides.residual(self.mask)

    def as_row(self) -> dict:
        return {
            "identity_id": self.identity_id,
            "instance": self.instance,
            "h": self.h,
            "dt": self.dt,
            "residual": self.residual,
            "slope": self.slope,
            "control_type": self.control_type,
            "passed": self.passed,
        }


def _mask(grid: GridDomain) -> np.ndarray:
    return grid.interior_mask(radius=DIAGNOSTIC_RADIUS)


def _report(identity_id: str, family: MetricFamily, sides: IdentitySides, positive: bool, dt: float) -> IdentityReport:
    mask = _mask(family.grid)
    report = IdentityReport(
        identity_id=identity_id,
        instance=family.name,
        control_type="positive" if positive else "negative",
        lhs_norm=sides.lhs_norm(mask),
        rhs_norm=sides.rhs_norm(mask),
        residual=sides.residual(mask),
        h=family.h,
        dt=dt,
        hypothesis=sides.hypothesis,
        sides=sides,
        mask=mask,
    )
    logger.debug(f"{identity_id} on {family.name}: residual {report.residual:.3e} ({report.control_type})")
    return report


def _step(family: MetricFamily, dt: float | None) -> float:
    return family.h if dt is None else dt


def _dgamma(family: MetricFamily, dt: float) -> np.ndarray:
    return family.time_derivative(lambda g: christoffel(g, family.grid), dt)


def verify_connection_variation(family: MetricFamily, dt: float | None = None) -> list[IdentityReport]:
    """The variation of the Levi-Civita connection in general and on F."""
    dt = _step(family, dt)
    g0, grid = family.g0, family.grid
    dgamma = _dgamma(family, dt)
    Dv = covariant_derivative(family.v, g0, grid, "ll")

    general = IdentitySides(
        lhs=2 * np.einsum("...mk,...ikj->...ijm", g0, dgamma),
        rhs=Dv + np.swapaxes(Dv, -3, -2) - np.einsum("...mij->...ijm", Dv),
    )
    restricted = IdentitySides(
        lhs=2 * dgamma,
        rhs=covariant_derivative(family.velocity_lift(), g0, grid, "ul"),
    )
    return [
        _report("connection_general", family, general, True, dt),
        _report("connection_F", family, restricted, family.in_F, dt),
    ]


def verify_curvature_variation(family: MetricFamily, dt: float | None = None) -> list[IdentityReport]:
    dt = _step(family, dt)
    g0, grid = family.g0, family.grid
    dR = family.time_derivative(lambda g: riemann_curvature(g, grid), dt)
    D = covariant_derivative(_dgamma(family, dt), g0, grid, "lul")
    R0 = riemann_curvature(g0, grid)

    general = IdentitySides(lhs=dR, rhs=D - np.swapaxes(D, -4, -3))
    restricted = IdentitySides(lhs=2 * dR, rhs=commutator(R0, family.velocity_lift()))
    return [
        _report("curvature_general", family, general, True, dt),
        _report("curvature_F", family, restricted, family.in_F, dt),
    ]


def verify_ric_variation(family: MetricFamily, dt: float | None = None) -> list[IdentityReport]:
    """Variations of Ric(Omega), Ric*(Omega), grad f and the Riemannian Ricci endomorphism."""
    dt = _step(family, dt)
    g0, grid, v = family.g0, family.grid, family.v
    V = family.velocity_lift()
    ric_star = ric_star_omega(g0, grid)
    grad_f = grad_log_density(g0, grid)
    R0 = riemann_curvature(g0, grid)

    d_ric = family.time_derivative(lambda g: bakry_emery_ricci(g, grid), dt)
    d_ric_star = family.time_derivative(lambda g: ric_star_omega(g, grid), dt)
    d_grad_f = family.time_derivative(lambda g: grad_log_density(g, grid), dt)
    d_riemann_ric = family.time_derivative(lambda g: raise_index(g, ricci(g, grid)), dt)

    cases = [
        ("ric_general", True, 2 * d_ric, -adjoint_nabla_omega(d_operator(v, g0, grid), g0, grid, "lll")),
        ("ric_F", family.in_F, 2 * d_ric, -laplacian_omega(g0, v, grid, "ll")),
        ("ric_endo_F", family.in_F, 2 * d_ric_star, -laplacian_omega(g0, V, grid, "ul") - 2 * V @ ric_star),
        (
            "grad_f_F",
            family.in_F,
            2 * d_grad_f,
            -nabla_star(V, g0, grid, "ul") - 2 * np.einsum("...kj,...j->...k", V, grad_f),
        ),
        (
            "ric_riemann_endo_F",
            family.in_F,
            2 * d_riemann_ric,
            -V @ raise_index(g0, ricci(g0, grid)) - star_endo(R0, V, g0),
        ),
    ]
    return [_report(name, family, IdentitySides(lhs=lhs, rhs=rhs), ok, dt) for name, ok, lhs, rhs in cases]


def verify_prescattering_variation(family: MetricFamily, dt: float | None = None) -> list[IdentityReport]:
    """Variation of nabla_{T_X} Ric*(Omega): the F form and the unrestricted total form."""
    dt = _step(family, dt)
    g0, grid = family.g0, family.grid
    gamma = christoffel(g0, grid)
    V = family.velocity_lift()
    R0 = riemann_curvature(g0, grid, gamma)
    ric_star = ric_star_omega(g0, grid)
    DV = covariant_derivative(V, g0, grid, "ul", gamma)
    E = alt(DV, "lul")
    ext_ric = alt_nabla(ric_star, g0, grid, gamma)

    lhs = 2 * family.time_derivative(lambda g: alt_nabla(ric_star_omega(g, grid), g, grid), dt)
    common = div_underline_omega(commutator(R0, V), g0, grid, gamma) - 2 * left_product(V, ext_ric)
    restricted = common + alt(circledstar(R0, DV, g0), "lul")
    total = (
        common
        + alt_nabla(g_transpose(adjoint_nabla_omega(E, g0, grid, "lul", gamma=gamma), g0), g0, grid, gamma)
        + alt(circledstar(R0, DV - E, g0), "lul")
        + alt(right_product(g_transpose(E, g0), ric_star), "lul")
        - contract_endo(ric_star, E, "lul")
    )
    return [
        _report("prescattering_F", family, IdentitySides(lhs=lhs, rhs=restricted), family.in_F, dt),
        _report("prescattering_total", family, IdentitySides(lhs=lhs, rhs=total), True, dt),
    ]


def _outer_commutator(DV: np.ndarray, T: np.ndarray, rest: int) -> np.ndarray:
    """[DV(e_i), T] with the derivative slot of DV prepended to T's layout."""
    r = _LETTERS[:rest]
    left = np.einsum(f"...Imz,...{r}zJ->...I{r}mJ", DV, T, optimize=True)
    right = np.einsum(f"...{r}mz,...IzJ->...I{r}mJ", T, DV, optimize=True)
    return left - right


def _max_abs(values: np.ndarray, mask: np.ndarray | None = None) -> float:
    values = values if mask is None else values[mask]
    return float(np.max(np.abs(values), initial=0.0))


def pder_sides(family: MetricFamily, H: np.ndarray, p: int, dt: float) -> IdentitySides:
    """2 d/dt nabla^p H for a fixed H against the formula without the bracket terms.

    The bracket terms [nabla v*, nabla^r H] are what the formula assumes
    away; their size is reported as the hypothesis.
    """
    if p < 1:
        raise ValueError(f"Derivative order must be at least 1, got {p}")
    g0, grid = family.g0, family.grid
    gamma = christoffel(g0, grid)
    DV = covariant_derivative(family.velocity_lift(), g0, grid, "ul", gamma)
    ladder = nabla_ladder(H, g0, grid, "ul", p - 1, gamma)
    mask = _mask(grid)

    Q = np.zeros(DV.shape[:-3] + (grid.dim,) + H.shape[-2:])
    brackets = _max_abs(_outer_commutator(DV, H, 0), mask)
    for r in range(1, p):
        sig = "l" * r + "ul"
        Q = covariant_derivative(Q, g0, grid, sig, gamma) - hat_neg(DV, ladder[r], sig)
        brackets = max(brackets, _max_abs(_outer_commutator(DV, ladder[r], r), mask))
    lhs = 2 * family.time_derivative(lambda g: nabla_p(H, g, grid, "ul", p), dt)
    return IdentitySides(lhs=lhs, rhs=Q, hypothesis=brackets)


def p_derivative_laplacian_sides(
    U: np.ndarray, g: np.ndarray, grid: GridDomain, p: int = 1, sig: str = "ul"
) -> IdentitySides:
    """nabla^p (Delta^Omega U) against -Tr nabla^{p+2} U plus the Leibniz expansion of nabla^p (nabla_{nabla f} U).

    Each subset S of the p outer slots puts nabla^{|S|} nabla f on S and
    nabla^{p-|S|+1} U on the rest, keeping the slot order.
    """
    if p < 1:
        raise ValueError(f"The derivative order must be at least 1, got p={p}")
    gamma = christoffel(g, grid)
    ladder = nabla_ladder(U, g, grid, sig, p + 2, gamma)
    f_ladder = nabla_ladder(grad_log_density(g, grid), g, grid, "u", p, gamma)
    outer = _LETTERS[26 : 26 + p]
    tail = _LETTERS[18 : 18 + len(sig)]
    lhs = nabla_p(laplacian_omega(g, U, grid, sig, gamma=gamma), g, grid, sig, p, gamma)
    rhs = -np.einsum(f"...mn,...{outer}mn{tail}->...{outer}{tail}", inv_metric(g), ladder[p + 2], optimize=True)
    for size in range(p + 1):
        for chosen in itertools.combinations(range(p), size):
            on_f = "".join(outer[i] for i in chosen)
            on_u = "".join(outer[i] for i in range(p) if i not in chosen)
            rhs = rhs + np.einsum(
                f"...{on_f}m,...{on_u}m{tail}->...{outer}{tail}", f_ladder[size], ladder[p - size + 1], optimize=True
            )
    return IdentitySides(lhs=lhs, rhs=rhs)


def verify_extD_and_Pder(
    family: MetricFamily,
    H: np.ndarray | None = None,
    p: int = 2,
    dt: float | None = None,
) -> list[IdentityReport]:
    """Variations of nabla H, nabla_{T_X} H and nabla^p H for a fixed endomorphism H.

    Also checks the first derivative of the Omega-Laplacian on the velocity lift.
    """
    dt = _step(family, dt)
    g0, grid = family.g0, family.grid
    H = fixed_endomorphism(grid) if H is None else np.asarray(H, dtype=float)
    gamma = christoffel(g0, grid)
    V = family.velocity_lift()
    DV = covariant_derivative(V, g0, grid, "ul", gamma)
    E = alt(DV, "lul")

    connection = IdentitySides(
        lhs=2 * family.time_derivative(lambda g: covariant_derivative(H, g, grid, "ul"), dt),
        rhs=commutator(DV, H),
    )
    extD = IdentitySides(
        lhs=2 * family.time_derivative(lambda g: alt_nabla(H, g, grid), dt),
        rhs=(
            -contract_endo(H, E, "lul")
            + alt_nabla(V @ H, g0, grid, gamma)
            - left_product(V, alt_nabla(H, g0, grid, gamma))
            + alt(right_product(g_transpose(E, g0), H), "lul")
        ),
    )
    pder = pder_sides(family, H, p, dt)
    pder_positive = family.in_F and pder.hypothesis <= HYPOTHESIS_TOLERANCE * max(1.0, _max_abs(DV))
    if not pder_positive:
        logger.info(f"pder on {family.name}: bracket hypothesis {pder.hypothesis:.3e}, treated as negative control")
    reports = [
        _report("connection_endo_F", family, connection, family.in_F, dt),
        _report("extD_general", family, extD, True, dt),
        _report(f"pder_p{p}", family, pder, pder_positive, dt),
        _report("p_derivative_laplacian", family, p_derivative_laplacian_sides(V, g0, grid), True, dt),
    ]
    if p >= 2:
        laplacian_p = p_derivative_laplacian_sides(V, g0, grid, p)
        reports.append(_report(f"p_derivative_laplacian_p{p}", family, laplacian_p, True, dt))
    return reports


def log_derivative_sides(B: np.ndarray, g: np.ndarray, grid: GridDomain) -> IdentitySides:
    """nabla log B against B^-1 nabla B; the hypothesis is max |[B, nabla B]|."""
    gamma = christoffel(g, grid)
    DB = covariant_derivative(B, g, grid, "ul", gamma)
    return IdentitySides(
        lhs=covariant_derivative(endo_log(B, g), g, grid, "ul", gamma),
        rhs=expand_like(np.linalg.inv(B), DB) @ DB,
        hypothesis=_max_abs(commutator(B, DB)),
    )


def verify_log_derivative(B: np.ndarray, g: np.ndarray, grid: GridDomain, instance: str = "B") -> IdentityReport:
    sides = log_derivative_sides(B, g, grid)
    positive = sides.hypothesis <= HYPOTHESIS_TOLERANCE * max(1.0, _max_abs(B))
    family = MetricFamily(instance, grid, g, np.zeros_like(g), kind="constant")
    return _report("log_derivative", family, sides, positive, 0.0)


def _static_report(identity_id: str, sides: IdentitySides, grid: GridDomain, instance: str, positive: bool) -> IdentityReport:
    family = MetricFamily(instance, grid, np.eye(grid.dim), np.zeros((grid.dim, grid.dim)), kind="constant")
    return _report(identity_id, family, sides, positive, 0.0)


def verify_bianchi(g: np.ndarray, grid: GridDomain, instance: str = "metric") -> IdentityReport:
    return _static_report("omega_bianchi", om_contracted_bianchi(g, grid), grid, instance, True)


def verify_weitzenbock(H: np.ndarray, g: np.ndarray, grid: GridDomain, instance: str = "metric") -> IdentityReport:
    return _static_report("weitzenbock", weitzenbock_tx(H, g, grid), grid, instance, True)


def verify_endo_div(u: np.ndarray, g: np.ndarray, grid: GridDomain, instance: str = "metric") -> IdentityReport:
    return _static_report("endo_div", endo_div_formula(u, g, grid), grid, instance, True)


def verify_commutator(
    A: np.ndarray, g: np.ndarray, grid: GridDomain, sig: str, instance: str = "metric", p: int = 1
) -> IdentityReport:
    """[nabla^p, Delta^Omega] A; positive only when the curvature brackets vanish."""
    sides = commutator_nabla_laplacian(A, g, grid, sig, p)
    scale = max(1.0, _max_abs(A))
    identity_id = "commutator" if p == 1 else f"commutator_p{p}"
    return _static_report(identity_id, sides, grid, instance, sides.hypothesis <= HYPOTHESIS_TOLERANCE * scale)


def _ratio(numerator: float, denominator: float) -> float:
    if numerator == 0.0:
        return 0.0
    if denominator == 0.0:
        return float("inf")
    return numerator / denominator


def hamilton_ratios(A: np.ndarray, g: np.ndarray, grid: GridDomain, r: int = 1, p: int = 2) -> dict[str, float]:
    """lhs / rhs-without-constant for the interpolation inequalities on one endomorphism field.

    gradient_product uses exponents (r, p, q) with 1/p + 1/q = 1/r on the first two
    derivatives; sup_weighted and integral_only compare nabla^r with nabla^p, r < p.
    """
    if not 1 <= r < p:
        raise ValueError(f"Interpolation needs 1 <= r < p, got r={r}, p={p}")
    q = 1.0 / (1.0 / r - 1.0 / p)
    ladder = nabla_ladder(A, g, grid, "ul", max(p, 2))
    norms = [np.clip(tensor_norm_sq(D, g, "l" * k + "ul"), 0.0, None) for k, D in enumerate(ladder)]

    def integral(values):
        return max(integrate_omega(values, grid), 0.0)

    product = _ratio(
        integral(norms[1] ** r) ** (1.0 / r),
        integral(norms[2] ** (p / 2)) ** (1.0 / p) * integral(norms[0] ** (q / 2)) ** (1.0 / q),
    )
    sup_A = float(np.sqrt(np.max(norms[0])))
    interp_one = _ratio(integral(norms[r] ** (p / r)), sup_A ** (2 * (p / r - 1)) * integral(norms[p]))
    interp_two = _ratio(
        integral(norms[r]),
        integral(norms[p]) ** (r / p) * integral(norms[0]) ** (1 - r / p),
    )
    return {"gradient_product": product, "sup_weighted": interp_one, "integral_only": interp_two}


def verify_hamilton_interpolation(
    samples: list[np.ndarray], g: np.ndarray, grid: GridDomain, r: int = 1, p: int = 2
) -> dict[str, float]:
    """Empirical constants: the largest ratio over the samples for each inequality."""
    constants = {"gradient_product": 0.0, "sup_weighted": 0.0, "integral_only": 0.0}
    for A in samples:
        for name, value in hamilton_ratios(A, g, grid, r, p).items():
            constants[name] = max(constants[name], value)
    logger.info(f"Interpolation constants on {len(samples)} samples: {constants}")
    return constants


def refinement_slope(hs: list[float], residuals: list[float]) -> float:
    """Least-squares slope of log residual against log h; inf once residuals reach zero."""
    if len(hs) != len(residuals) or len(hs) < 2:
        raise ValueError("Refinement slope needs at least two (h, residual) pairs")
    if min(residuals) <= ZERO_RESIDUAL:
        return float("inf")
    slope, _ = np.polyfit(np.log(hs), np.log(residuals), 1)
    return float(slope)


@dataclass
class SuiteConfig:
    """Instance matrix of the identity suite."""

    points_1d: tuple[int, int] = (128, 256)
    points_2d: tuple[int, int] = (32, 64)
    accuracy: int = 4
    budget_factor: float = 10.0
    negative_ratio: float = 100.0
    hamilton_samples: int = 10
    seed: int = 0
    identities: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("points_1d", "points_2d"):
            coarse, fine = getattr(self, name)
            if fine <= coarse:
                raise ValueError(f"{name} must list a coarse and a finer resolution, got {(coarse, fine)}")
        if self.budget_factor <= 0 or self.negative_ratio <= 0:
            raise ValueError("budget_factor and negative_ratio must be positive")


@dataclass
class SuiteResult:
    reports: list[IdentityReport]
    hamilton_rows: list[dict]
    summary: dict

    @property
    def passed(self) -> bool:
        return bool(self.summary["passed"])


def _families(config: SuiteConfig, level: int) -> list[MetricFamily]:
    n1, n2 = config.points_1d[level], config.points_2d[level]
    return [
        gaussian_geodesic_1d(n1, accuracy=config.accuracy),
        torus_codazzi_2d(n2, accuracy=config.accuracy, seed=config.seed),
        torus_generic_2d(n2, accuracy=config.accuracy, seed=config.seed),
        constant_family(torus_nd(2, n2, accuracy=config.accuracy)),
    ]


FAMILY_CHECKS = (
    (verify_connection_variation, ("connection_general", "connection_F")),
    (verify_curvature_variation, ("curvature_general", "curvature_F")),
    (verify_ric_variation, ("ric_general", "ric_F", "ric_endo_F", "grad_f_F", "ric_riemann_endo_F")),
    (verify_prescattering_variation, ("prescattering_F", "prescattering_total")),
)
PDER_IDS = ("connection_endo_F", "extD_general", "pder_p2", "p_derivative_laplacian", "p_derivative_laplacian_p2")


def _wanted(config: SuiteConfig, *identity_ids: str) -> bool:
    return not config.identities or any(i in config.identities for i in identity_ids)


def _static_reports(config: SuiteConfig, level: int) -> list[IdentityReport]:
    n2 = config.points_2d[level]
    generic = torus_generic_2d(n2, accuracy=config.accuracy, seed=config.seed)
    warped = torus_codazzi_2d(n2, accuracy=config.accuracy, seed=config.seed)
    flat = torus_nd(2, n2, accuracy=config.accuracy)
    identity = np.broadcast_to(np.eye(2), flat.shape + (2, 2))
    rng = np.random.default_rng(config.seed)
    scalar = band_limited(generic.grid, rng)
    endo = fixed_endomorphism(generic.grid, seed=config.seed + 1)
    reports = []
    for fam in (generic, warped):
        H = fixed_endomorphism(fam.grid, seed=config.seed + 1)
        if _wanted(config, "omega_bianchi"):
            reports.append(verify_bianchi(fam.g0, fam.grid, fam.name))
        if _wanted(config, "weitzenbock"):
            reports.append(verify_weitzenbock(H, fam.g0, fam.grid, fam.name))
        if _wanted(config, "endo_div"):
            reports.append(verify_endo_div(fam.v, fam.g0, fam.grid, fam.name))
    for p, identity_id in ((1, "commutator"), (2, "commutator_p2")):
        if _wanted(config, identity_id):
            reports.append(verify_commutator(scalar, generic.g0, generic.grid, "", "generic2d_scalar", p))
            reports.append(verify_commutator(endo, generic.g0, generic.grid, "ul", "generic2d_endo", p))
    if _wanted(config, "log_derivative"):
        reports.append(verify_log_derivative(commuting_exponential(flat), identity, flat, "scalar_exp"))
        reports.append(verify_log_derivative(rotated_exponential_2d(flat), identity, flat, "rotated_exp"))
    return reports


def _level_reports(config: SuiteConfig, level: int) -> list[IdentityReport]:
    reports = []
    for fam in _families(config, level):
        for check, identity_ids in FAMILY_CHECKS:
            if _wanted(config, *identity_ids):
                reports += check(fam)
        if _wanted(config, *PDER_IDS):
            reports += verify_extD_and_Pder(fam, H=fixed_endomorphism(fam.grid, seed=config.seed + 1))
    reports += _static_reports(config, level)
    if config.identities:
        reports = [r for r in reports if r.identity_id in config.identities]
    return reports


def _judge(coarse: list[IdentityReport], fine: list[IdentityReport], config: SuiteConfig) -> list[str]:
    """Fill slopes and verdicts in place and return failure descriptions."""
    failures = []
    for c, f in zip(coarse, fine):
        slope = refinement_slope([c.h, f.h], [c.residual, f.residual])
        c.slope = f.slope = slope
    best_positive: dict[str, float] = {}
    for f in fine:
        if f.control_type == "positive":
            best_positive[f.identity_id] = max(best_positive.get(f.identity_id, 0.0), f.residual)

    for c, f in zip(coarse, fine):
        if f.control_type == "positive":
            converged = f.residual <= ROUNDOFF_RESIDUAL or f.slope >= MIN_SLOPE
            ok = f.residual <= config.budget_factor * f.h**2 and converged
            reason = f"residual {f.residual:.3e}, budget {config.budget_factor * f.h**2:.3e}, slope {f.slope:.2f}"
        else:
            counterpart = best_positive.get(f.identity_id)
            if counterpart is None:
                ok, reason = False, "no positive control at this resolution"
            else:
                ok = f.residual >= config.negative_ratio * counterpart
                reason = f"residual {f.residual:.3e} against positive {counterpart:.3e}"
        c.passed = f.passed = ok
        if not ok:
            failures.append(f"{f.identity_id}/{f.instance} ({f.control_type}): {reason}")
    return failures


def gaussian_flow_samples(
    points: int,
    count: int,
    accuracy: int = 2,
    amplitude: float = 0.1,
    t_end: float | None = None,
    dt: float | None = None,
) -> tuple[list[np.ndarray], np.ndarray, GridDomain]:
    """``count`` states A_t, evenly spaced in time, of the flow from A0 = amplitude sin x on the 1D Gaussian soliton.

    Returns:
        Tuple of (samples, base metric, grid).
    """
    t_end = FLOW_SAMPLE_T_END if t_end is None else t_end
    dt = FLOW_SAMPLE_DT if dt is None else dt
    if count < 1:
        raise ValueError(f"Need at least one flow sample, got {count}")
    grid = gaussian1d(points, accuracy=accuracy)
    (x,) = grid.coordinates()
    g0 = np.broadcast_to(np.eye(1), grid.shape + (1, 1)).copy()
    initial = FlowState.from_log((amplitude * np.sin(x))[..., None, None], g0, grid, "H")
    steps = max(1, math.ceil(t_end / dt - 1e-9))
    config = IntegratorConfig(dt=dt, t_end=t_end, diagnostics_stride=max(1, steps // count), p_max=0)
    trajectory = run_flow(initial, config, diagnostics=False)
    return [s.A for s in trajectory.states[:count]], g0, grid


def _hamilton_sources(config: SuiteConfig, level: int):
    fam = torus_generic_2d(config.points_2d[level], accuracy=config.accuracy, seed=config.seed)
    yield "generic2d", fam.h, random_endo_samples(fam.grid, config.hamilton_samples, seed=config.seed), fam.g0, fam.grid
    samples, g0, grid = gaussian_flow_samples(config.points_1d[level], config.hamilton_samples, accuracy=config.accuracy)
    yield "gauss1d_flow", min(grid.spacing), samples, g0, grid


def _hamilton_rows(config: SuiteConfig) -> tuple[list[dict], list[str]]:
    constants: dict[str, list] = {}
    for level in (0, 1):
        for instance, h, samples, g, grid in _hamilton_sources(config, level):
            constants.setdefault(instance, []).append((h, verify_hamilton_interpolation(samples, g, grid)))
    rows, failures = [], []
    for instance, ((_, coarse), (h, fine)) in constants.items():
        for name in ("gradient_product", "sup_weighted", "integral_only"):
            change = abs(fine[name] - coarse[name]) / max(abs(fine[name]), ZERO_RESIDUAL)
            ok = bool(np.isfinite(fine[name])) and change <= STABILITY_TOLERANCE
            rows.append(
                {"inequality": name, "instance": instance, "h": h, "constant": fine[name], "relative_change": change, "passed": ok}
            )
            if not ok:
                failures.append(f"hamilton {name}/{instance}: constant {fine[name]:.4e}, change {change:.3%}")
    return rows, failures


def run_suite(config: SuiteConfig | None = None, output_dir=None, config_hash: str = "") -> SuiteResult:
    """Run every identity on the instance matrix at two resolutions.

    Positive controls must stay within budget_factor * h^2 at the finer
    resolution and converge with slope >= 1.8; negative controls must exceed
    negative_ratio times the largest positive residual of the same identity.
    """
    config = config or SuiteConfig()
    logger.info(f"Identity suite: 1D {config.points_1d}, 2D {config.points_2d}, accuracy {config.accuracy}")
    coarse = _level_reports(config, 0)
    fine = _level_reports(config, 1)
    failures = _judge(coarse, fine, config)
    if not any(r.control_type == "negative" for r in fine):
        failures.append("suite has no negative control")
    hamilton_rows, hamilton_failures = _hamilton_rows(config) if config.hamilton_samples else ([], [])
    failures += hamilton_failures

    for f in fine:
        level = logging.INFO if f.passed else logging.WARNING
        logger.log(level, f"{f.identity_id}/{f.instance} [{f.control_type}] residual {f.residual:.3e} slope {f.slope:.2f}")
    summary = {
        "config_hash": config_hash,
        "identities": len(fine),
        "negative_controls": sum(r.control_type == "negative" for r in fine),
        "failures": failures,
        "passed": not failures,
    }
    result = SuiteResult(reports=coarse + fine, hamilton_rows=hamilton_rows, summary=summary)
    if output_dir is not None:
        write_csv(f"{output_dir}/identity_suite.csv", SUITE_COLUMNS, [r.as_row() for r in result.reports], config_hash)
        if hamilton_rows:
            write_csv(f"{output_dir}/interpolation_constants.csv", HAMILTON_COLUMNS, hamilton_rows, config_hash)
        write_json(f"{output_dir}/identity_suite.json", summary)
    logger.info(f"Identity suite {'passed' if result.passed else 'failed'}: {len(failures)} failures")
    return result
