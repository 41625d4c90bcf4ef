"""Configuration management for srflab.

Two layers: ``Config`` reads the environment (and a .env file), ``RunConfig``
reads one declarative JSON run file. Command line flags override both.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

from .flow import REPRESENTATIONS, FlowState, IntegratorConfig
from .functional import CONVEX_KINDS
from .grid import (
    GridDomain,
    PolarizationField,
    circle_weighted,
    gaussian1d,
    gaussian_nd,
    read_field_dump,
    torus_nd,
)
from .report import canonical_json_bytes, sha256_bytes
from .verifier import SuiteConfig

logger = logging.getLogger(__name__)

TESTBEDS = ("gaussian1d", "gaussian_nd", "torus_nd", "circle_weighted")
SECTIONS = (
    "testbed",
    "omega",
    "initial",
    "polarization",
    "integrator",
    "suite",
    "convexity",
    "geodesic",
    "output_dir",
    "seed",
    "p_max",
)
MIN_POINTS = 8


class ConfigError(ValueError):
    """A configuration problem, anchored to a file line when one is known."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        super().__init__(message)
        self.message = message
        self.path = str(path) if path is not None else None
        self.line = line

    def __str__(self) -> str:
        if self.path is None:
            return self.message
        return f"{self.path}:{self.line if self.line is not None else 0}: {self.message}"


@dataclass
class Config:
    """Process-level settings loaded from environment variables."""

    output_dir: str = "results"
    log_level: str = "INFO"
    seed: int = 0
    write_dumps: bool = False

    @classmethod
    def from_env(cls) -> "Config":
        """Load configuration from environment variables.

        Raises:
            ValueError: If SRF_SEED is set but is not an integer.
        """
        load_dotenv()

        seed_raw = os.getenv("SRF_SEED", "").strip()
        try:
            seed = int(seed_raw) if seed_raw else 0
        except ValueError:
            raise ValueError(f"SRF_SEED must be an integer, got '{seed_raw}'") from None

        write_dumps = os.getenv("SRF_WRITE_DUMPS", "").lower() in ("1", "true", "yes")

        return cls(
            output_dir=os.getenv("SRF_OUTPUT_DIR", "").strip() or "results",
            log_level=os.getenv("SRF_LOG_LEVEL", "").strip().upper() or "INFO",
            seed=seed,
            write_dumps=write_dumps,
        )


def _key_line(lines: list[str], key: str) -> int | None:
    needle = f'"{key}"'
    for number, text in enumerate(lines, start=1):
        if needle in text:
            return number
    return None


def _cos_modes(grid: GridDomain, modes: list[dict]) -> np.ndarray:
    coords = grid.coordinates()
    value = np.zeros(grid.shape)
    for mode in modes:
        arg = sum(float(k) * c for k, c in zip(mode["k"], coords))
        value = value + float(mode["a"]) * np.cos(arg + float(mode.get("phase", 0.0)))
    return value


@dataclass
class RunConfig:
    """A declarative run: testbed, initial data, integrator and the check settings.

    ``initial.modes`` describes A0 = sum a cos(k.x + phase) diag(diagonal);
    ``initial.field_file`` points at a field dump instead.
    """

    testbed: dict = field(default_factory=lambda: {"kind": "gaussian1d", "points": 256})
    omega: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    polarization: dict = field(default_factory=dict)
    integrator: dict = field(default_factory=dict)
    suite: dict = field(default_factory=dict)
    convexity: dict = field(default_factory=dict)
    geodesic: dict = field(default_factory=dict)
    output_dir: str = "results"
    seed: int = 0
    p_max: int = 3
    source: str | None = field(default=None, compare=False)
    lines: list[str] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def _error(self, message: str, key: str) -> ConfigError:
        return ConfigError(message, self.source, _key_line(self.lines, key) if self.source else None)

    @classmethod
    def load(cls, path: str | Path, env: Config | None = None) -> "RunConfig":
        """Read a JSON run file; environment values fill keys the file leaves out.

        Raises:
            ConfigError: On unreadable files, JSON syntax errors and invalid values.
        """
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config: {e}", path) from e
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON: {e.msg}", path, e.lineno) from e
        if not isinstance(data, dict):
            raise ConfigError("Top level of the config must be an object", path, 1)
        lines = text.splitlines()
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"Unknown config section '{unknown[0]}'", path, _key_line(lines, unknown[0]))
        if env is not None:
            data.setdefault("output_dir", env.output_dir)
            data.setdefault("seed", env.seed)
        logger.info(f"Loaded run config {path}")
        return cls(**data, source=str(path), lines=lines)

    def validate(self) -> None:
        kind = self.testbed.get("kind")
        if kind not in TESTBEDS:
            raise self._error(f"Unknown testbed '{kind}', expected one of {TESTBEDS}", "kind")
        dim = self.dim
        if kind in ("gaussian1d", "circle_weighted") and dim != 1:
            raise self._error(f"Testbed {kind} is one dimensional, got dim={dim}", "dim")
        if dim not in (1, 2, 3):
            raise self._error(f"Grid dimension must be 1, 2 or 3, got {dim}", "dim")
        if int(self.testbed.get("points", 64)) < MIN_POINTS:
            raise self._error(f"points must be at least {MIN_POINTS}", "points")
        if self.omega.get("log_modes") and kind != "torus_nd":
            raise self._error("omega.log_modes only apply to the torus_nd testbed", "log_modes")
        for mode in self.omega.get("log_modes", []) + self.initial.get("modes", []):
            if len(mode.get("k", [])) != dim or "a" not in mode:
                raise self._error(f"Every mode needs 'a' and a wave vector 'k' of length {dim}", "k")
        for mode in self.initial.get("modes", []):
            if len(mode.get("diagonal", [1.0] * dim)) != dim:
                raise self._error(f"Mode diagonal must have {dim} entries", "diagonal")
        if self.initial.get("representation", "H") not in REPRESENTATIONS:
            raise self._error(f"Unknown representation, expected one of {REPRESENTATIONS}", "representation")

        diagonal = self.polarization.get("diagonal")
        if diagonal is not None:
            if len(diagonal) != dim:
                raise self._error(f"polarization.diagonal must have {dim} entries", "diagonal")
            if len(set(float(v) for v in diagonal)) != len(diagonal):
                raise self._error("polarization.diagonal entries must be pairwise distinct", "diagonal")

        if self.convexity.get("kind", "plusplus") not in CONVEX_KINDS:
            raise self._error(f"Unknown convex set kind, expected one of {CONVEX_KINDS}", "convexity")
        if not isinstance(self.seed, int):
            raise self._error(f"seed must be an integer, got {self.seed!r}", "seed")
        if not isinstance(self.p_max, int) or self.p_max < 0:
            raise self._error(f"p_max must be a non-negative integer, got {self.p_max!r}", "p_max")
        for section, build in (("integrator", self.integrator_config), ("suite", self.suite_config)):
            try:
                build()
            except (TypeError, ValueError) as e:
                raise self._error(f"Invalid {section} settings: {e}", section) from e

    @property
    def dim(self) -> int:
        return int(self.testbed.get("dim", 1))

    def with_overrides(
        self,
        output_dir: str | None = None,
        seed: int | None = None,
        t_end: float | None = None,
        dt: float | None = None,
        points: int | None = None,
    ) -> "RunConfig":
        """A copy with command line values applied."""
        changes = {}
        if output_dir is not None:
            changes["output_dir"] = output_dir
        if seed is not None:
            changes["seed"] = seed
        if t_end is not None or dt is not None:
            integrator = dict(self.integrator)
            if t_end is not None:
                integrator["t_end"] = t_end
            if dt is not None:
                integrator["dt"] = dt
            changes["integrator"] = integrator
        if points is not None:
            changes["testbed"] = {**self.testbed, "points": points}
        return replace(self, **changes) if changes else self

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("source")
        data.pop("lines")
        return data

    def config_hash(self) -> str:
        return sha256_bytes(canonical_json_bytes(self.to_dict()))

    def build_grid(self) -> GridDomain:
        tb = self.testbed
        kind = tb["kind"]
        accuracy = int(tb.get("accuracy", 2))
        points = int(tb.get("points", 256 if kind == "gaussian1d" else 64))
        if kind == "gaussian1d":
            return gaussian1d(points, float(tb.get("half_width", 8.0)), accuracy)
        if kind == "gaussian_nd":
            return gaussian_nd(self.dim, points, float(tb.get("half_width", 8.0)), accuracy)
        if kind == "circle_weighted":
            return circle_weighted(points, float(tb.get("amplitude", 1.0)), accuracy)
        grid = torus_nd(self.dim, points, accuracy=accuracy)
        modes = self.omega.get("log_modes")
        if modes:
            grid = torus_nd(self.dim, points, omega=np.exp(_cos_modes(grid, modes)), accuracy=accuracy)
        return grid

    def base_metric(self, grid: GridDomain) -> np.ndarray:
        scale = np.asarray(self.initial.get("base_diagonal", [1.0] * grid.dim), dtype=float)
        if scale.shape != (grid.dim,) or np.any(scale <= 0):
            raise self._error("initial.base_diagonal must hold positive entries, one per axis", "base_diagonal")
        return np.broadcast_to(np.diag(scale), grid.shape + (grid.dim, grid.dim)).copy()

    def initial_log(self, grid: GridDomain) -> np.ndarray:
        """A0 from the field file or the mode list."""
        n = grid.dim
        if "field_file" in self.initial:
            try:
                A0, _ = read_field_dump(self.initial["field_file"])
            except (OSError, KeyError, ValueError) as e:
                raise self._error(f"Cannot read initial field: {e}", "field_file") from e
            if A0.shape != grid.shape + (n, n):
                raise self._error(f"Initial field has shape {A0.shape}, expected {grid.shape + (n, n)}", "field_file")
            return A0
        A0 = np.zeros(grid.shape + (n, n))
        for mode in self.initial.get("modes", []):
            profile = _cos_modes(grid, [mode])
            A0 = A0 + profile[..., None, None] * np.diag(np.asarray(mode.get("diagonal", [1.0] * n), dtype=float))
        return A0

    def initial_state(self, grid: GridDomain) -> FlowState:
        representation = self.initial.get("representation", "H")
        return FlowState.from_log(self.initial_log(grid), self.base_metric(grid), grid, representation)

    def polarization_field(self, grid: GridDomain) -> PolarizationField | None:
        diagonal = self.polarization.get("diagonal")
        if diagonal is None:
            return None
        return PolarizationField.from_diagonal(diagonal, grid)

    def integrator_config(self) -> IntegratorConfig:
        settings = dict(self.integrator)
        settings.setdefault("p_max", self.p_max)
        if "dump_times" in settings:
            settings["dump_times"] = tuple(settings["dump_times"])
        return IntegratorConfig(**settings)

    def suite_config(self) -> SuiteConfig:
        settings = dict(self.suite)
        for key in ("points_1d", "points_2d", "identities"):
            if key in settings:
                settings[key] = tuple(settings[key])
        settings.setdefault("seed", self.seed)
        return SuiteConfig(**settings)
