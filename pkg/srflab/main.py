"""Main entry point for srflab."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, RunConfig
from .flow import (
    FlowAbort,
    decay_check,
    hp_monitor,
    run_flow,
    sandwich_check,
    stationary_residual,
    w_monotonicity,
    write_trajectory_csv,
)
from .functional import ConvexSetSpec, convex_set_membership, inclusion_bounds, sample_members, segment_scan
from .grid import export_slice_csv
from .metric_space import conservation_along_geodesic
from .report import render_summary, write_csv, write_json
from .verifier import run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_ACCEPTANCE = 4
COMMANDS = ("run", "verify", "convexity", "geodesic", "report")
ABORT_TYPES = {"CflViolation": "cfl", "PositivityLoss": "positivity", "NonFiniteState": "nan"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srflab", description="Finite-difference lab for the Omega-Soliton-Ricci flow")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON run file")
        p.add_argument("--output-dir", type=str, default=None)
        if name != "report":
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--t-end", type=float, default=None)
            p.add_argument("--dt", type=float, default=None)
            p.add_argument("--points", type=int, default=None)
    return parser


def _load_run_config(args: argparse.Namespace, env: Config) -> RunConfig:
    if args.config is not None:
        config = RunConfig.load(args.config, env)
    elif args.command == "verify":
        config = RunConfig(output_dir=env.output_dir, seed=env.seed)
    else:
        raise ConfigError(f"The '{args.command}' command needs --config")
    return config.with_overrides(
        output_dir=args.output_dir,
        seed=getattr(args, "seed", None),
        t_end=getattr(args, "t_end", None),
        dt=getattr(args, "dt", None),
        points=getattr(args, "points", None),
    )


def cmd_run(config: RunConfig, env: Config) -> int:
    grid = config.build_grid()
    initial = config.initial_state(grid)
    integrator = config.integrator_config()
    config_hash = config.config_hash()
    out = Path(config.output_dir)
    dump_dir = out / "dumps" if env.write_dumps else None

    try:
        trajectory = run_flow(initial, integrator, dump_dir=dump_dir, config_hash=config_hash)
    except FlowAbort as e:
        write_json(
            out / "run_summary.json",
            {
                "config_hash": config_hash,
                "aborted": True,
                "abort_type": ABORT_TYPES.get(type(e).__name__, "abort"),
                "abort_message": str(e),
                "t_last": float(e.state.t),
            },
        )
        raise
    write_trajectory_csv(out / "trajectory.csv", trajectory, config_hash)
    final = trajectory.final
    export_slice_csv(
        out / "final_slice.csv",
        {"g_00": final.g[..., 0, 0], "A_00": final.A[..., 0, 0], "f": final.f},
        final.grid,
        config_hash=config_hash,
    )
    summary = {
        "config_hash": config_hash,
        "aborted": False,
        "t_final": trajectory.final.t,
        "stationary_residual": stationary_residual(trajectory.final),
        "decay": decay_check(trajectory),
        "w_monotonicity": w_monotonicity(trajectory),
        "hp": hp_monitor(trajectory),
        "sandwich": sandwich_check(trajectory),
    }
    write_json(out / "run_summary.json", summary)
    logger.info(f"Run finished at t={trajectory.final.t:.4f}, soliton residual {summary['stationary_residual']:.3e}")
    return EXIT_OK


def cmd_verify(config: RunConfig, env: Config) -> int:
    result = run_suite(config.suite_config(), config.output_dir, config.config_hash())
    for failure in result.summary["failures"]:
        logger.error(f"Acceptance failure: {failure}")
    return EXIT_OK if result.passed else EXIT_ACCEPTANCE


def cmd_convexity(config: RunConfig, env: Config) -> int:
    settings = config.convexity
    grid = config.build_grid()
    spec = ConvexSetSpec(
        kind=settings.get("kind", "plusplus"),
        g0=config.base_metric(grid),
        grid=grid,
        K=config.polarization_field(grid),
        delta=float(settings.get("delta", 0.0)),
        seed=config.seed,
    )
    segments = int(settings.get("segments", 20))
    points = int(settings.get("points", 11))
    tolerance = float(settings.get("tolerance", 1e-8))
    members = sample_members(spec, 2 * segments, float(settings.get("amplitude", 0.2)), config.seed)

    rows, worst, outside = [], np.inf, 0
    for s in range(segments):
        A0, A1 = members[2 * s], members[2 * s + 1]
        scan = segment_scan(A0, A1, spec.layer, points)
        worst = min(worst, scan["min_second_difference"])
        if convex_set_membership(0.5 * (A0 + A1), spec) < 0:
            outside += 1
        second = [None, *scan["second_differences"], None]
        for t, w, d2 in zip(scan["t"], scan["values"], second):
            rows.append({"segment": s, "t": t, "w_value": w, "second_difference": d2})

    inclusion_failures = None
    if spec.kind == "plusplus":
        inclusion_failures = sum(not inclusion_bounds(A, spec.layer, seed=config.seed)["passed"] for A in members)

    config_hash = config.config_hash()
    out = Path(config.output_dir)
    write_csv(out / "convexity_scan.csv", ["segment", "t", "w_value", "second_difference"], rows, config_hash)
    passed = worst >= -tolerance and outside == 0 and not inclusion_failures
    write_json(
        out / "convexity_summary.json",
        {
            "config_hash": config_hash,
            "kind": spec.kind,
            "segments": segments,
            "min_second_difference": worst,
            "midpoints_outside": outside,
            "inclusion_failures": inclusion_failures,
            "passed": passed,
        },
    )
    logger.info(f"Convexity scan on {spec.kind}: min second difference {worst:.3e}, {outside} midpoints outside")
    return EXIT_OK if passed else EXIT_ACCEPTANCE


def cmd_geodesic(config: RunConfig, env: Config) -> int:
    settings = config.geodesic
    grid = config.build_grid()
    g0 = config.base_metric(grid)
    v = g0 @ (-2 * config.initial_log(grid))
    times = [float(t) for t in settings.get("times", [0.0, 0.25, 0.5, 1.0])]
    rows = conservation_along_geodesic(g0, v, config.polarization_field(grid), grid, times, config.p_max)

    tolerance = float(settings.get("tolerance", 10 * max(grid.spacing) ** 2))
    initial = {r["residual_name"]: r["value"] for r in rows if r["time"] == times[0]}
    drifts = {name: max(r["value"] for r in rows if r["residual_name"] == name) - initial[name] for name in initial}
    passed = all(d <= tolerance for d in drifts.values())

    config_hash = config.config_hash()
    out = Path(config.output_dir)
    write_csv(out / "geodesic_conservation.csv", ["time", "residual_name", "value"], rows, config_hash)
    write_json(
        out / "geodesic_summary.json",
        {"config_hash": config_hash, "drifts": drifts, "tolerance": tolerance, "passed": passed},
    )
    logger.info(f"Geodesic conservation: drifts {drifts}, tolerance {tolerance:.3e}")
    return EXIT_OK if passed else EXIT_ACCEPTANCE


def cmd_report(args: argparse.Namespace, env: Config) -> int:
    directory = args.output_dir or env.output_dir
    print(render_summary(directory))
    return EXIT_OK


HANDLERS = {
    "run": cmd_run,
    "verify": cmd_verify,
    "convexity": cmd_convexity,
    "geodesic": cmd_geodesic,
}


def main(argv: list[str] | None = None) -> int:
    """Run one srflab command and return its exit code."""
    args = build_parser().parse_args(argv)

    try:
        env = Config.from_env()
    except ValueError as e:
        logging.basicConfig(level=logging.ERROR)
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG

    logging.basicConfig(
        level=getattr(logging, env.log_level, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stdout)],
    )
    logger.info(f"Starting srflab {args.command}...")

    if args.command == "report":
        try:
            return cmd_report(args, env)
        except ValueError as e:
            logger.error(f"Report error: {e}")
            return EXIT_CONFIG

    try:
        config = _load_run_config(args, env)
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG

    try:
        return HANDLERS[args.command](config, env)
    except FlowAbort as e:
        logger.error(f"Numerical abort ({type(e).__name__}): {e}")
        return EXIT_ABORT
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
