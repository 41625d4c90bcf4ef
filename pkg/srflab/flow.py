"""Time integration of the Omega-Soliton-Ricci flow and its diagnostics.

The flow dg/dt = Ric_g(Omega) - g is integrated in one of three equivalent
representations relative to a base metric g0:

- "g": the metric itself,
- "H": H = (g^-1 g0)^(1/2), evolving by a porous-medium type equation,
- "A": A = log H, evolving as the gradient flow of the functional in log coordinates.

The H and A forms use the flat layer of ``functional`` and need a constant
diagonal g0.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .algebra import (
    endo_exp,
    endo_log,
    endo_power,
    endo_sqrt,
    metric_log,
    min_eigenvalue,
    raise_index,
    sym,
    tensor_norm_sq,
)
from .functional import FlatLayer, w_bold, w_omega_metric
from .grid import GridDomain, integrate_omega, write_field_dump
from .metric_space import MetricPair, max_residual, sigma_K_membership
from .report import write_csv
from .riemann import (
    bakry_emery_ricci,
    christoffel,
    covariant_derivative,
    laplacian_omega,
    log_density,
    nabla_ladder,
)

logger = logging.getLogger(__name__)

REPRESENTATIONS = ("g", "H", "A")
SCHEMES = ("rk4", "explicit-euler")
DIAGNOSTIC_RADIUS = 6.0
DEFAULT_DT_LADDER = (0.2, 0.1, 0.05)
SEMINORM_FLOOR = 1e-28


class FlowAbort(RuntimeError):
    """The integrator stopped before t_end; ``state`` is the last good state."""

    def __init__(self, message: str, state: "FlowState", trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.state = state
        self.trajectory = trajectory


class PositivityLoss(FlowAbort):
    pass


class CflViolation(FlowAbort):
    def __init__(self, message: str, state: "FlowState", advised_dt: float, trajectory: "Trajectory | None" = None):
        super().__init__(message, state, trajectory)
        self.advised_dt = advised_dt


class NonFiniteState(FlowAbort):
    pass


@dataclass(eq=False)
class FlowState:
    """A point of the flow at time t, stored in one representation.

    ``values`` holds g, H or A according to ``representation``; the other
    two are derived on demand.
    """

    t: float
    values: np.ndarray = field(repr=False)
    g0: np.ndarray = field(repr=False)
    grid: GridDomain
    representation: str = "H"

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"Unknown representation '{self.representation}', expected one of {REPRESENTATIONS}")
        n = self.grid.dim
        expected = self.grid.shape + (n, n)
        self.values = np.asarray(self.values, dtype=float)
        self.g0 = np.broadcast_to(np.asarray(self.g0, dtype=float), expected)
        if self.values.shape != expected:
            raise ValueError(f"State field has shape {self.values.shape}, expected {expected}")

    @classmethod
    def from_metric(cls, g: np.ndarray, g0: np.ndarray, grid: GridDomain, representation: str = "H", t: float = 0.0) -> "FlowState":
        return cls(t=t, values=g, g0=g0, grid=grid, representation="g").as_representation(representation)

    @classmethod
    def from_log(cls, A: np.ndarray, g0: np.ndarray, grid: GridDomain, representation: str = "H", t: float = 0.0) -> "FlowState":
        return cls(t=t, values=A, g0=g0, grid=grid, representation="A").as_representation(representation)

    @cached_property
    def g(self) -> np.ndarray:
        if self.representation == "g":
            return self.values
        if self.representation == "H":
            return sym(self.g0 @ endo_power(self.values, -2.0, self.g0))
        return sym(self.g0 @ endo_exp(-2 * self.values, self.g0))

    @cached_property
    def H(self) -> np.ndarray:
        if self.representation == "H":
            return self.values
        if self.representation == "A":
            return endo_exp(self.values, self.g0)
        return endo_sqrt(np.linalg.solve(self.values, self.g0), self.g0)

    @cached_property
    def A(self) -> np.ndarray:
        if self.representation == "A":
            return self.values
        if self.representation == "H":
            return endo_log(self.values, self.g0)
        return metric_log(self.g0, self.values)

    @cached_property
    def f(self) -> np.ndarray:
        return log_density(self.g, self.grid)

    @cached_property
    def ric_omega(self) -> np.ndarray:
        return bakry_emery_ricci(self.g, self.grid, boundary="neumann")

    @cached_property
    def gdot(self) -> np.ndarray:
        return self.ric_omega - self.g

    def as_representation(self, representation: str) -> "FlowState":
        if representation == self.representation:
            return self
        values = {"g": lambda: self.g, "H": lambda: self.H, "A": lambda: self.A}[representation]()
        return FlowState(t=self.t, values=values, g0=self.g0, grid=self.grid, representation=representation)

    def evolved(self, values: np.ndarray, t: float) -> "FlowState":
        return FlowState(t=t, values=values, g0=self.g0, grid=self.grid, representation=self.representation)

    def conversion_residual(self) -> float:
        """max |g0 exp(-2A) - g| with A and g both derived from the stored field."""
        return float(np.max(np.abs(self.g0 @ endo_exp(-2 * self.A, self.g0) - self.g)))


@dataclass
class IntegratorConfig:
    dt: float = 1e-3
    scheme: str = "rk4"
    t_end: float = 1.0
    cfl_guard: float = 0.5
    diagnostics_stride: int = 1
    p_max: int = 3
    dump_times: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"Unknown scheme '{self.scheme}', expected one of {SCHEMES}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be non-negative, got {self.t_end}")
        if not self.cfl_guard > 0:
            raise ValueError(f"cfl_guard must be positive, got {self.cfl_guard}")
        if self.diagnostics_stride < 1:
            raise ValueError(f"diagnostics_stride must be at least 1, got {self.diagnostics_stride}")
        if self.p_max < 0:
            raise ValueError(f"p_max must be non-negative, got {self.p_max}")
        self.dump_times = tuple(float(t) for t in self.dump_times)

    def step_plan(self) -> tuple[int, float]:
        """Number of steps and the uniform step that lands exactly on t_end."""
        if self.t_end == 0:
            return 0, self.dt
        steps = max(1, math.ceil(self.t_end / self.dt - 1e-9))
        return steps, self.t_end / steps


@dataclass
class DiagnosticsRecord:
    t: float
    sup_gdot: float
    sup_nabla_gdot: float
    w_value: float
    soliton_residual: float
    min_ric_eig: float
    hp: list[float]
    cross_form_drift: float

    def as_row(self) -> dict:
        row = {
            "t": self.t,
            "sup_gdot": self.sup_gdot,
            "sup_nabla_gdot": self.sup_nabla_gdot,
            "w_value": self.w_value,
            "soliton_residual": self.soliton_residual,
            "min_ric_eig": self.min_ric_eig,
            "cross_form_drift": self.cross_form_drift,
        }
        row.update({f"hp_{p}": v for p, v in enumerate(self.hp)})
        return row

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.as_row().values())


@dataclass
class Trajectory:
    states: list[FlowState] = field(default_factory=list)
    records: list[DiagnosticsRecord] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def final(self) -> FlowState:
        return self.states[-1]


def flat_layer_for(state: FlowState) -> FlatLayer | None:
    try:
        return FlatLayer(state.g0, state.grid)
    except ValueError:
        return None


def rhs_g(state: FlowState, layer: FlatLayer | None = None) -> np.ndarray:
    """dg/dt = Ric_g(Omega) - g."""
    return state.gdot


def rhs_H(state: FlowState, layer: FlatLayer | None = None) -> np.ndarray:
    """dH/dt with 2 dH/dt = -H^2 Delta H - H^3 Ric*_{g0}(Omega) + H, Delta taken for g0."""
    layer = layer or FlatLayer(state.g0, state.grid)
    H = state.H
    H2 = H @ H
    return 0.5 * (-H2 @ layer.laplacian(H) - H2 @ H @ layer.rho + H)


def rhs_A(state: FlowState, layer: FlatLayer | None = None) -> np.ndarray:
    """dA/dt with 2 dA/dt = e^A div(e^A grad A) - e^{2A} Ric*_{g0}(Omega) + I.

    Evaluated through face fluxes, independently of ``functional.grad_w``.
    """
    layer = layer or FlatLayer(state.g0, state.grid)
    E = endo_exp(state.A, state.g0)
    return 0.5 * (E @ layer.divergence_of_gradient(E) - E @ E @ layer.rho + layer.identity)


RHS = {"g": rhs_g, "H": rhs_H, "A": rhs_A}


def max_h_squared(state: FlowState) -> float:
    """max |H|^2 over the grid, read from whichever field the state stores."""
    if state.representation == "H":
        return float(np.max(-min_eigenvalue(-state.values, state.g0))) ** 2
    if state.representation == "A":
        return float(np.exp(2 * np.max(-min_eigenvalue(-state.values, state.g0))))
    return float(1.0 / np.min(min_eigenvalue(raise_index(state.g0, state.values), state.g0)))


def stiffness(state: FlowState) -> float:
    """sum over axes of max g0^{aa} / h_a^2."""
    g0inv = np.linalg.inv(state.g0)
    return float(sum(np.max(g0inv[..., a, a]) / h**2 for a, h in enumerate(state.grid.spacing)))


def cfl_number(state: FlowState, dt: float) -> float:
    return dt * max_h_squared(state) * stiffness(state)


def _check_state(state: FlowState, last_good: FlowState) -> None:
    if not np.all(np.isfinite(state.values)):
        raise NonFiniteState(f"Non-finite values at t={state.t:.6g}", last_good)
    if state.representation == "A":
        return
    lowest = float(np.min(min_eigenvalue(state.values, state.g0 if state.representation == "H" else None)))
    if lowest <= 0:
        raise PositivityLoss(f"{state.representation} lost positivity at t={state.t:.6g} (min eig {lowest:.3e})", last_good)


def step(state: FlowState, config: IntegratorConfig, layer: FlatLayer | None = None, dt: float | None = None) -> FlowState:
    """One explicit step in the state's own representation."""
    dt = config.dt if dt is None else dt
    rhs = RHS[state.representation]
    if state.representation != "g" and layer is None:
        layer = FlatLayer(state.g0, state.grid)
    y, t = state.values, state.t
    k1 = rhs(state, layer)
    if config.scheme == "explicit-euler":
        return state.evolved(y + dt * k1, t + dt)
    k2 = rhs(state.evolved(y + 0.5 * dt * k1, t + 0.5 * dt), layer)
    k3 = rhs(state.evolved(y + 0.5 * dt * k2, t + 0.5 * dt), layer)
    k4 = rhs(state.evolved(y + dt * k3, t + dt), layer)
    return state.evolved(y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4), t + dt)


def diagnose(state: FlowState, layer: FlatLayer | None = None, p_max: int = 3) -> DiagnosticsRecord:
    """Diagnostics of one state, sup-norms taken away from truncated boundaries.

    The functional is w_bold on the flat layer when there is one, otherwise
    the metric form W_Omega.
    """
    grid, g = state.grid, state.g
    mask = grid.interior_mask(radius=DIAGNOSTIC_RADIUS)
    gamma = christoffel(g, grid)
    gdot_star = raise_index(g, state.gdot)
    ladder = nabla_ladder(gdot_star, g, grid, "ul", max(p_max, 1), gamma)
    sup_gdot = float(np.sqrt(np.max(tensor_norm_sq(state.gdot, g, "ll")[mask])))
    sup_nabla = float(np.sqrt(np.max(tensor_norm_sq(ladder[1], g, "lul")[mask])))
    hp = [integrate_omega(tensor_norm_sq(D, g, "l" * p + "ul"), grid) for p, D in enumerate(ladder[: p_max + 1])]
    ric_star = raise_index(g, state.ric_omega)
    w_value = w_bold(state.A, layer) if layer is not None else w_omega_metric(g, grid)
    return DiagnosticsRecord(
        t=state.t,
        sup_gdot=sup_gdot,
        sup_nabla_gdot=sup_nabla,
        w_value=float(w_value),
        soliton_residual=sup_gdot,
        min_ric_eig=float(np.min(min_eigenvalue(ric_star, g)[mask])),
        hp=hp,
        cross_form_drift=state.conversion_residual(),
    )


def _dump(state: FlowState, dump_dir: Path, config_hash: str) -> None:
    write_field_dump(dump_dir / f"metric_t{state.t:.6f}.bin", state.g, state.grid, config_hash)


def run_flow(
    initial: FlowState,
    config: IntegratorConfig,
    layer: FlatLayer | None = None,
    diagnostics: bool = True,
    dump_dir: str | Path | None = None,
    config_hash: str = "",
) -> Trajectory:
    """Integrate from initial to config.t_end, keeping every stride-th state.

    Args:
        initial: Initial state; its representation is the one integrated.
        config: Step size, scheme, CFL guard and diagnostics stride.
        layer: Flat layer for the H and A forms; built from initial.g0 if omitted.
        diagnostics: Compute a DiagnosticsRecord for every kept state.
        dump_dir: If given, binary metric dumps are written at config.dump_times.
        config_hash: Hash embedded in dumps.

    Returns:
        The trajectory of kept states and their diagnostics.

    Raises:
        CflViolation: If a step would exceed the CFL guard.
        PositivityLoss: If the metric or H loses positivity.
        NonFiniteState: If the state becomes NaN or infinite.
    """
    if layer is None:
        layer = flat_layer_for(initial)
    if initial.representation != "g" and layer is None:
        raise ValueError(f"Representation '{initial.representation}' needs a constant diagonal base metric")
    steps, dt = config.step_plan()
    dump_dir = Path(dump_dir) if dump_dir is not None else None
    pending_dumps = sorted(config.dump_times)

    trajectory = Trajectory(states=[initial])
    if diagnostics:
        trajectory.records.append(diagnose(initial, layer, config.p_max))
    logger.info(
        f"Flow start: representation={initial.representation} scheme={config.scheme} "
        f"dt={dt:.3e} steps={steps} grid={initial.grid.label}{list(initial.grid.shape)}"
    )

    state = initial
    try:
        for i in range(1, steps + 1):
            cfl = cfl_number(state, dt)
            if cfl > config.cfl_guard:
                advised = dt * config.cfl_guard / cfl
                raise CflViolation(
                    f"CFL number {cfl:.3f} exceeds guard {config.cfl_guard} at t={state.t:.6g}; use dt <= {advised:.3e}",
                    state,
                    advised,
                )
            new = step(state, config, layer, dt)
            _check_state(new, state)
            state = new
            logger.debug(f"Step {i}: t={state.t:.6g} cfl={cfl:.3f}")

            while dump_dir is not None and pending_dumps and state.t >= pending_dumps[0] - 0.5 * dt:
                _dump(state, dump_dir, config_hash)
                pending_dumps.pop(0)

            if i % config.diagnostics_stride == 0 or i == steps:
                trajectory.states.append(state)
                if diagnostics:
                    record = diagnose(state, layer, config.p_max)
                    if not record.is_finite():
                        raise NonFiniteState(f"Non-finite diagnostics at t={state.t:.6g}", trajectory.states[-2])
                    trajectory.records.append(record)
                    logger.info(
                        f"t={record.t:.4f} sup|gdot|={record.sup_gdot:.3e} W={record.w_value:.8f} "
                        f"min eig Ric*={record.min_ric_eig:.4f}"
                    )
    except FlowAbort as e:
        e.trajectory = trajectory
        logger.error(f"Flow aborted: {e}")
        raise
    logger.info(f"Flow done: t={state.t:.6g}, {len(trajectory.states)} states kept")
    return trajectory


def write_trajectory_csv(path: str | Path, trajectory: Trajectory, config_hash: str) -> Path:
    rows = [r.as_row() for r in trajectory.records]
    hp_columns = [f"hp_{p}" for p in range(len(trajectory.records[0].hp))] if rows else []
    columns = [
        "t",
        "sup_gdot",
        "sup_nabla_gdot",
        "w_value",
        "soliton_residual",
        "min_ric_eig",
        *hp_columns,
        "cross_form_drift",
    ]
    return write_csv(path, columns, rows, config_hash)


def _metric_drift(a: FlowState, b: FlowState, mask: np.ndarray) -> float:
    return float(np.max(np.abs(a.g - b.g)[mask]))


def cross_check(initial: FlowState, config: IntegratorConfig, mask: np.ndarray | None = None) -> dict:
    """Integrate the same data in all three representations and compare the metrics.

    Returns:
        Dict with "pairs" (max drift per representation pair), "max_drift"
        and "rows" of {time, pair, drift}.
    """
    grid = initial.grid
    mask = grid.interior_mask(radius=DIAGNOSTIC_RADIUS) if mask is None else mask
    layer = FlatLayer(initial.g0, grid)
    runs = {
        rep: run_flow(initial.as_representation(rep), config, layer, diagnostics=False)
        for rep in REPRESENTATIONS
    }
    pairs = {"g_vs_H": ("g", "H"), "g_vs_A": ("g", "A"), "H_vs_A": ("H", "A")}
    rows = []
    worst = {name: 0.0 for name in pairs}
    for k, t in enumerate(runs["g"].times):
        for name, (a, b) in pairs.items():
            drift = _metric_drift(runs[a].states[k], runs[b].states[k], mask)
            worst[name] = max(worst[name], drift)
            rows.append({"time": float(t), "pair": name, "drift": drift})
    max_drift = max(worst.values())
    logger.info(f"Cross check: max drift {max_drift:.3e} ({worst})")
    return {"pairs": worst, "max_drift": max_drift, "rows": rows}


def heat_identity_residual(trajectory: Trajectory, mask: np.ndarray | None = None) -> float:
    """Relative residual of (Delta + 2 d/dt)|gdot|^2 = -2|nabla gdot*|^2 - 4|gdot|^2 - 4 Tr(gdot*)^3.

    The time derivative is a central difference between neighbouring kept states.
    """
    states = trajectory.states
    if len(states) < 3:
        raise ValueError("Heat identity needs at least three kept states")
    grid = states[0].grid
    mask = grid.interior_mask(radius=DIAGNOSTIC_RADIUS) if mask is None else mask
    q = [tensor_norm_sq(s.gdot, s.g, "ll") for s in states]
    worst_abs, scale = 0.0, 1e-14
    for i in range(1, len(states) - 1):
        s = states[i]
        dqdt = (q[i + 1] - q[i - 1]) / (states[i + 1].t - states[i - 1].t)
        lhs = laplacian_omega(s.g, q[i], grid) + 2 * dqdt
        G = raise_index(s.g, s.gdot)
        grad_sq = tensor_norm_sq(covariant_derivative(G, s.g, grid, "ul"), s.g, "lul")
        rhs = -2 * grad_sq - 4 * q[i] - 4 * np.trace(G @ G @ G, axis1=-2, axis2=-1)
        worst_abs = max(worst_abs, float(np.max(np.abs(lhs - rhs)[mask])))
        scale = max(scale, float(np.max(np.abs(lhs)[mask])), float(np.max(np.abs(rhs)[mask])))
    return worst_abs / scale


def measured_delta(trajectory: Trajectory) -> float:
    """inf over the trajectory of the smallest eigenvalue of Ric*(Omega)."""
    return min(r.min_ric_eig for r in trajectory.records)


def decay_check(trajectory: Trajectory, delta: float | None = None, tolerance: float = 1e-2) -> dict:
    """sup|gdot_t| <= sup|gdot_0| exp(-delta t / 2) (1 + tolerance) at every recorded time."""
    delta = measured_delta(trajectory) if delta is None else delta
    t = np.array([r.t for r in trajectory.records])
    sup = np.array([r.sup_gdot for r in trajectory.records])
    bound = sup[0] * np.exp(-0.5 * delta * (t - t[0])) * (1 + tolerance)
    excess = float(np.max(sup - bound))
    usable = sup > 1e-13
    rate = float(-np.polyfit(t[usable], np.log(sup[usable]), 1)[0]) if np.count_nonzero(usable) >= 2 else math.inf
    return {"delta": delta, "fitted_rate": rate, "max_excess": excess, "passed": bool(excess <= 0)}


def sandwich_check(trajectory: Trajectory) -> dict:
    """exp(-C) g0 <= g_t <= exp(C) g0 with C the time integral of sup|gdot|."""
    t = np.array([r.t for r in trajectory.records])
    sup = np.array([r.sup_gdot for r in trajectory.records])
    C = float(np.trapezoid(sup, t)) if len(t) > 1 else 0.0
    g0 = trajectory.states[0].g0
    lowest, highest = math.inf, -math.inf
    for s in trajectory.states:
        ratio = raise_index(g0, s.g)
        lowest = min(lowest, float(np.min(min_eigenvalue(ratio, g0))))
        highest = max(highest, float(np.max(-min_eigenvalue(-ratio, g0))))
    passed = lowest >= math.exp(-C) * (1 - 1e-10) and highest <= math.exp(C) * (1 + 1e-10)
    return {"C": C, "min_ratio": lowest, "max_ratio": highest, "passed": bool(passed)}


def gradient_bound_check(trajectory: Trajectory, tolerance: float = 1e-2) -> dict:
    """sup|nabla gdot*| exp(t) stays bounded by its early maximum."""
    t = np.array([r.t for r in trajectory.records])
    scaled = np.array([r.sup_nabla_gdot for r in trajectory.records]) * np.exp(t - t[0])
    C1 = float(np.max(scaled))
    half = max(1, len(scaled) // 2)
    early = float(np.max(scaled[:half]))
    passed = bool(np.all(scaled[half:] <= early * (1 + tolerance) + 1e-12))
    return {"C1": C1, "passed": passed}


def heat_diagnostics(trajectory: Trajectory, tolerance: float = 1e-2) -> dict:
    return {
        "delta": measured_delta(trajectory),
        "identity_residual": heat_identity_residual(trajectory),
        "decay": decay_check(trajectory, tolerance=tolerance),
        "sandwich": sandwich_check(trajectory),
        "gradient_bound": gradient_bound_check(trajectory, tolerance),
    }


def hp_monitor(trajectory: Trajectory, p_max: int | None = None) -> dict:
    """Fit exponential decay rates of the seminorms integral |nabla^p gdot*|^2 Omega.

    Seminorms that stay below the floor (parallel data) get rate inf.
    """
    t = np.array([r.t for r in trajectory.records])
    hp = np.array([r.hp for r in trajectory.records])
    p_max = hp.shape[1] - 1 if p_max is None else p_max
    rates = []
    for p in range(p_max + 1):
        values = hp[:, p]
        usable = values > SEMINORM_FLOOR
        if np.count_nonzero(usable) < 2:
            rates.append(math.inf)
            continue
        rates.append(float(-np.polyfit(t[usable], np.log(values[usable]), 1)[0]))
    passed = all(r > 0 for r in rates[1:])
    return {"rates": rates, "passed": passed}


def w_monotonicity(trajectory: Trajectory, tolerance: float = 1e-8) -> dict:
    """The functional must not increase between kept states by more than tolerance."""
    w = np.array([r.w_value for r in trajectory.records])
    increments = np.diff(w)
    worst = float(np.max(increments, initial=-math.inf))
    return {"max_increment": worst, "passed": bool(worst <= tolerance)}


def closed_form_error(trajectory: Trajectory) -> float:
    """max relative error against g_t = exp(-t) g0, exact when Ric_{g0}(Omega) = 0 and g0 is constant."""
    worst = 0.0
    for s in trajectory.states:
        exact = math.exp(-s.t) * s.g0
        worst = max(worst, float(np.max(np.abs(s.g - exact)) / np.max(np.abs(exact))))
    return worst


def scheme_order(initial: FlowState, config: IntegratorConfig, dts=DEFAULT_DT_LADDER) -> dict:
    """Global closed-form error over a dt ladder and its log-log slope."""
    errors = []
    for dt in dts:
        trajectory = run_flow(initial, replace(config, dt=dt, diagnostics_stride=10**9), diagnostics=False)
        errors.append(closed_form_error(trajectory))
    slope = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    logger.info(f"Scheme order {config.scheme}: errors {errors}, slope {slope:.3f}")
    return {"dts": list(dts), "errors": errors, "slope": slope}


def flow_preserves_flat(trajectory: Trajectory, K, p_max: int = 1) -> dict:
    """Largest Sigma_K(g0) membership residual of every kept state."""
    residuals = []
    for s in trajectory.states:
        pair = MetricPair(g0=s.g0, g=s.g, grid=s.grid)
        residuals.append(max_residual(sigma_K_membership(pair, K, p_max)))
    h2 = max(trajectory.states[0].grid.spacing) ** 2
    budget = 10 * (residuals[0] + h2)
    return {"residuals": residuals, "budget": budget, "passed": bool(max(residuals) <= budget)}


def stationary_residual(state: FlowState) -> float:
    """sup |Ric(Omega) - g|_g away from truncated boundaries; zero exactly at solitons."""
    mask = state.grid.interior_mask(radius=DIAGNOSTIC_RADIUS)
    return float(np.sqrt(np.max(tensor_norm_sq(state.gdot, state.g, "ll")[mask])))
