"""Command-line front end.

    safesip solve SCENE --out DIR        optimize, audit, write trajectory and logs
    safesip verify SCENE TRAJECTORY      dense audit of a stored trajectory
    safesip compare SCENE --epsilons ... feasible solver against the exchange baseline
    safesip demo NAME --out DIR          solve a bundled scene and report Lipschitz ratios

Exit statuses: 0 success, 1 not converged or audit infeasible, 2 invalid input,
3 infeasible initial guess, 4 line-search stall.
"""

import argparse
import functools
import logging
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from safesip.baseline_oracle import (
    ExchangeError,
    exchange_solve,
    lipschitz_report,
    verify_feasibility,
)
from safesip.constraints import Problem
from safesip.examples import SCENE_BUILDERS, bundled_scene
from safesip.scene import Scene, SceneError, load_scene, read_yaml
from safesip.solver import DIRECTION_ORDERS, InfeasibleInitialGuessError, StallError, solve
from safesip.trajectory import TrajectoryParams

logger = logging.getLogger(__name__)


EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE_START = 3
EXIT_STALLED = 4

TRAJECTORY_FILE = "trajectory.yaml"
LOG_FILE = "convergence.csv"
REPORT_FILE = "feasibility.yaml"
LIPSCHITZ_FILE = "lipschitz.csv"
COMPARE_FILE = "compare.csv"
COMPARE_COLUMNS = [
    "method",
    "epsilon",
    "converged",
    "audit_verdict",
    "objective",
    "iterations",
    "subdivisions",
    "contained",
]
OVERRIDE_KEYS = ["mu", "eta", "x0", "d0", "order", "initial_splits", "dt_audit", "seed"]


def _exit_codes(command):
    """Turn the solver's exceptions into exit statuses."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs) -> int:
        try:
            return command(*args, **kwargs)
        except SceneError as error:
            logger.error(f"Invalid scene: {error}")
            return EXIT_USAGE
        except InfeasibleInitialGuessError as error:
            logger.error(f"Infeasible initial guess: {error}")
            return EXIT_INFEASIBLE_START
        except StallError as error:
            logger.error(f"Solver stalled: {error}")
            return EXIT_STALLED

    return wrapper


def _write_yaml(path: Path, data: dict):
    with open(path, "w") as file:
        yaml.safe_dump(data, file, sort_keys=False)


def _contained(problem: Problem, params: TrajectoryParams) -> bool | None:
    if problem.probe is None:
        return None
    return problem.probe.contains(problem.chain, params)


def _objective_value(problem: Problem, params: TrajectoryParams) -> float:
    return float(problem.objective.evaluate(params, problem.chain)[0])


def _solve_scene(scene: Scene, out_dir) -> int:
    problem = scene.problem
    result = solve(problem, scene.spec, scene.config)
    report = verify_feasibility(
        problem, result.params, scene.spec.d0, scene.dt_audit, scene.config.num_threads
    )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_yaml(
        out_dir / TRAJECTORY_FILE,
        {
            "scene": problem.name,
            "converged": result.converged,
            "objective": _objective_value(problem, result.params),
            "subdivisions": result.subdivisions,
            "params": result.params.to_dict(),
        },
    )
    result.log.to_csv(out_dir / LOG_FILE)

    summary = {"converged": result.converged, **report.to_dict()}
    contained = _contained(problem, result.params)
    if contained is not None:
        summary["contained"] = contained
    _write_yaml(out_dir / REPORT_FILE, summary)

    logger.info(
        f"Solved '{problem.name}': converged={result.converged}, audit {report.verdict}, "
        f"{len(result.log) - 1} iterations, {result.subdivisions} subdivisions. Results in {out_dir}."
    )
    return EXIT_OK if result.converged and report.feasible else EXIT_FAILED


@_exit_codes
def cmd_solve(scene_path, out_dir, overrides: dict | None = None, solver_path=None) -> int:
    """Optimize a scene and write the trajectory, convergence log and audit report."""
    return _solve_scene(load_scene(scene_path, overrides, solver_path), out_dir)


@_exit_codes
def cmd_verify(
    scene_path, trajectory_path, dt: float | None = None, overrides: dict | None = None, solver_path=None
) -> int:
    """Audit a stored trajectory against a scene; `dt` defaults to the scene's audit interval."""
    if dt is not None and dt <= 0:
        logger.error(f"The audit interval must be positive, got {dt=}.")
        return EXIT_USAGE
    scene = load_scene(scene_path, overrides, solver_path)
    document = read_yaml(trajectory_path)
    try:
        params = TrajectoryParams.from_dict(document.get("params", document))
    except (KeyError, TypeError, ValueError) as error:
        logger.error(f"Invalid trajectory file {trajectory_path}: {error}")
        return EXIT_USAGE

    chain = scene.problem.chain
    if params.n_joints != chain.n_joints:
        logger.error(
            f"The trajectory has {params.n_joints} joints but the scene chain has {chain.n_joints}."
        )
        return EXIT_USAGE

    dt = scene.dt_audit if dt is None else dt
    report = verify_feasibility(scene.problem, params, scene.spec.d0, dt, scene.config.num_threads)
    print(yaml.safe_dump(report.to_dict(), sort_keys=False), end="")
    return EXIT_OK if report.feasible else EXIT_FAILED


def _compare_row(scene: Scene, method: str, epsilon: float, params, converged, iterations, subdivisions):
    problem = scene.problem
    report = verify_feasibility(problem, params, scene.spec.d0, scene.dt_audit, scene.config.num_threads)
    return {
        "method": method,
        "epsilon": epsilon,
        "converged": converged,
        "audit_verdict": report.verdict,
        "objective": _objective_value(problem, params),
        "iterations": iterations,
        "subdivisions": subdivisions,
        "contained": _contained(problem, params),
    }


@_exit_codes
def cmd_compare(
    scene_path, epsilons=(), out_dir=None, overrides: dict | None = None, solver_path=None
) -> int:
    """Run the feasible solver once and the exchange baseline at every sampling interval.

    Prints one row per run; exits 0 when the feasible solver's result passes the audit.
    """
    epsilons = [float(epsilon) for epsilon in epsilons]
    if any(epsilon <= 0 for epsilon in epsilons):
        logger.error(f"Sampling intervals must be positive, got {epsilons}.")
        return EXIT_USAGE

    scene = load_scene(scene_path, overrides, solver_path)
    problem = scene.problem
    result = solve(problem, scene.spec, scene.config)
    rows = [
        _compare_row(
            scene, "safesip", np.nan, result.params, result.converged, len(result.log) - 1, result.subdivisions
        )
    ]

    for epsilon in epsilons:
        try:
            baseline = exchange_solve(
                problem, scene.spec, scene.config, epsilon=epsilon, max_rounds=scene.exchange_rounds
            )
        except ExchangeError as error:
            logger.warning(f"Exchange method failed at {epsilon=}: {error}")
            rows.append(
                {
                    "method": "exchange",
                    "epsilon": epsilon,
                    "converged": False,
                    "audit_verdict": "not run",
                    "objective": np.nan,
                    "iterations": 0,
                    "subdivisions": 0,
                    "contained": None,
                }
            )
            continue
        rows.append(
            _compare_row(scene, "exchange", epsilon, baseline.params, baseline.converged, len(baseline.log), 0)
        )

    table = pd.DataFrame(rows, columns=COMPARE_COLUMNS)
    print(table.to_string(index=False))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        table.to_csv(out_dir / COMPARE_FILE, index=False)
    return EXIT_OK if rows[0]["audit_verdict"] == "feasible" else EXIT_FAILED


@_exit_codes
def cmd_demo(name: str, out_dir, overrides: dict | None = None, trials: int = 1000) -> int:
    """Solve a bundled scene and write its Lipschitz over-estimation report next to the results."""
    if name not in SCENE_BUILDERS:
        logger.error(f"Unknown scene {name!r}, must be one of {sorted(SCENE_BUILDERS)}.")
        return EXIT_USAGE
    scene = bundled_scene(name, overrides)
    status = _solve_scene(scene, out_dir)

    report = lipschitz_report(scene.problem.chain, trials=trials, seed=scene.seed)
    report.to_csv(Path(out_dir) / LIPSCHITZ_FILE)
    logger.info(
        f"Lipschitz over-estimation ratio for '{name}': "
        f"min {report['ratio'].min():.3g}, median {report['ratio'].median():.3g}, "
        f"max {report['ratio'].max():.3g}."
    )
    return status


def _common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--verbose", "-v", action="store_true", help="Log per-iteration detail.")
    overrides = parser.add_argument_group("solver overrides")
    overrides.add_argument("--mu", type=float, help="Initial barrier weight.")
    overrides.add_argument("--eta", type=float, help="Exponent of the safety margin, in (0, 1/6).")
    overrides.add_argument("--x0", type=float, help="Barrier support width.")
    overrides.add_argument("--d0", type=float, help="Required clearance.")
    overrides.add_argument("--order", choices=sorted(DIRECTION_ORDERS))
    overrides.add_argument("--initial-splits", dest="initial_splits", type=int)
    overrides.add_argument("--dt-audit", dest="dt_audit", type=float, help="Dense audit interval.")
    overrides.add_argument("--seed", type=int)
    return parser


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="safesip", description="Feasibility-guaranteed trajectory optimization."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    solve_parser = commands.add_parser("solve", parents=[common], help="Optimize a scene.")
    solve_parser.add_argument("scene", type=Path)
    solve_parser.add_argument("--out", type=Path, default=Path("results"))
    solve_parser.add_argument("--solver-config", dest="solver_config", type=Path)

    verify_parser = commands.add_parser("verify", parents=[common], help="Audit a trajectory.")
    verify_parser.add_argument("scene", type=Path)
    verify_parser.add_argument("trajectory", type=Path)
    verify_parser.add_argument("--dt", type=float, help="Audit interval; the scene's dt_audit by default.")
    verify_parser.add_argument("--solver-config", dest="solver_config", type=Path)

    compare_parser = commands.add_parser(
        "compare", parents=[common], help="Compare against the exchange method."
    )
    compare_parser.add_argument("scene", type=Path)
    compare_parser.add_argument("--epsilons", type=float, nargs="*", default=[])
    compare_parser.add_argument("--out", type=Path)
    compare_parser.add_argument("--solver-config", dest="solver_config", type=Path)

    demo_parser = commands.add_parser("demo", parents=[common], help="Solve a bundled scene.")
    demo_parser.add_argument("name", choices=sorted(SCENE_BUILDERS))
    demo_parser.add_argument("--out", type=Path, default=Path("results"))
    demo_parser.add_argument("--trials", type=int, default=1000, help="Lipschitz ground-truth trials.")

    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    args = _parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    overrides = {key: getattr(args, key) for key in OVERRIDE_KEYS}

    if args.command == "solve":
        return cmd_solve(args.scene, args.out, overrides, args.solver_config)
    elif args.command == "verify":
        return cmd_verify(args.scene, args.trajectory, args.dt, overrides, args.solver_config)
    elif args.command == "compare":
        return cmd_compare(args.scene, args.epsilons, args.out, overrides, args.solver_config)
    return cmd_demo(args.name, args.out, overrides, args.trials)


if __name__ == "__main__":
    raise SystemExit(main())
