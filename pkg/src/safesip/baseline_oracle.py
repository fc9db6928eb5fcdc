"""Independent audits and the sampled-constraint baseline.

Nothing here relies on the safety check or on interval leaves: the audit
samples time densely, the Lipschitz ground truth measures speeds by finite
differences, and the exchange method only ever sees a finite set of sampled
instants.
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from safesip.barrier import BarrierSpec
from safesip.constraints import (
    BarrierTerm,
    PoseCache,
    Problem,
    assemble_terms,
    ordered_map,
    pair_distance,
    pair_distances,
    resolve_num_threads,
)
from safesip.kinematics import KinematicChain, forward_kinematics, lipschitz_bound
from safesip.solver import ConvergenceLog, SolverConfig, search_direction
from safesip.trajectory import TrajectoryParams, evaluate, limit_barrier

logger = logging.getLogger(__name__)


class ExchangeError(RuntimeError):
    """The exchange method has no iterate that is strictly feasible on its instant set."""


def sample_times(horizon: float, dt: float) -> np.ndarray:
    """0, dt, 2dt, ... below the horizon, then the horizon itself."""
    if dt <= 0:
        raise ValueError(f"The sampling interval must be positive, got {dt=}.")
    times = np.arange(0.0, horizon, dt)
    if times.size == 0 or times[-1] < horizon:
        times = np.append(times, horizon)
    return times


@dataclass(frozen=True)
class Violation:
    pair: str
    t: float
    distance: float


@dataclass(frozen=True, eq=False)
class FeasibilityReport:
    sampled_instants: int
    min_distance: float
    violations: tuple[Violation, ...]
    d0: float

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def verdict(self) -> str:
        return "feasible" if self.feasible else "infeasible"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "sampled_instants": self.sampled_instants,
            "min_distance": float(self.min_distance),
            "d0": float(self.d0),
            "violations": [
                {"pair": v.pair, "t": float(v.t), "distance": float(v.distance)} for v in self.violations
            ],
        }


def _sampled_poses(problem: Problem, params: TrajectoryParams, times: np.ndarray) -> np.ndarray:
    return forward_kinematics(problem.chain, evaluate(params, times))


def verify_feasibility(
    problem: Problem,
    params: TrajectoryParams,
    d0: float,
    dt: float,
    num_threads: int | None = None,
) -> FeasibilityReport:
    """Exhaustive dense audit of every pair at t = 0, dt, 2dt, ... and t = T."""
    times = sample_times(params.horizon, dt)
    poses = _sampled_poses(problem, params, times)
    distances = ordered_map(
        lambda pair: pair_distances(problem, pair, poses),
        list(problem.pairs),
        resolve_num_threads(num_threads),
    )

    min_distance = np.inf
    violations = []
    for pair, values in zip(problem.pairs, distances):
        if values.size:
            min_distance = min(min_distance, float(values.min()))
        violations.extend(
            Violation(pair.label, float(times[i]), float(values[i])) for i in np.flatnonzero(values <= d0)
        )

    report = FeasibilityReport(len(times), min_distance, tuple(violations), d0)
    logger.info(
        f"Dense audit of '{problem.name}' at {dt=}: {report.verdict}, "
        f"min distance {min_distance:.6g} over {len(times)} instants."
    )
    return report


def lipschitz_ground_truth(
    chain: KinematicChain,
    link: int,
    primitive: int,
    trials: int = 1000,
    dt: float = 1e-3,
    seed: int | None = 0,
    duration: float = 1.0,
    start=None,
    rates=None,
) -> float:
    """Largest sampled vertex speed of a primitive under random unit-rate joint motions.

    Each trial starts at a random configuration within the joint limits and
    moves every joint at a constant rate drawn from [-1, 1], stopping at the
    limits. `start` and `rates` pin those choices for targeted trials.
    """
    if trials < 1:
        raise ValueError(f"'trials' must be at least 1, got {trials}.")
    rng = np.random.default_rng(seed)
    vertices = chain.links[link][primitive].vertices
    times = np.arange(0.0, duration + dt / 2, dt)

    fastest = 0.0
    for _ in range(trials):
        origin = rng.uniform(chain.joint_lower, chain.joint_upper) if start is None else np.asarray(start, float)
        speed = rng.uniform(-1.0, 1.0, chain.n_joints) if rates is None else np.asarray(rates, float)
        configurations = np.clip(
            origin + times[:, None] * speed, chain.joint_lower, chain.joint_upper
        )
        poses = forward_kinematics(chain, configurations)[:, link]
        positions = np.einsum("mij,vj->mvi", poses[:, :3, :3], vertices) + poses[:, None, :3, 3]
        steps = np.linalg.norm(np.diff(positions, axis=0), axis=-1) / dt
        fastest = max(fastest, float(steps.max(initial=0.0)))
    return fastest


def lipschitz_report(
    chain: KinematicChain, trials: int = 1000, dt: float = 1e-3, seed: int | None = 0
) -> pd.DataFrame:
    """Bound, sampled ground truth and over-estimation ratio for every primitive."""
    index = pd.MultiIndex.from_tuples(
        [(i, j) for i, link in enumerate(chain.links) for j in range(len(link))],
        names=["link", "primitive"],
    )
    bounds = [lipschitz_bound(chain, i, j) for i, j in index]
    truths = [lipschitz_ground_truth(chain, i, j, trials, dt, seed) for i, j in index]
    report = pd.DataFrame({"bound": bounds, "ground_truth": truths}, index=index)
    report["ratio"] = report["bound"] / report["ground_truth"]
    return report


def sample_violations(
    problem: Problem, params: TrajectoryParams, epsilon: float, d0: float
) -> dict[int, tuple[float, float]]:
    """Deepest sampled violation per pair, as {pair_id: (t, distance)}."""
    times = sample_times(params.horizon, epsilon)
    poses = _sampled_poses(problem, params, times)
    deepest = {}
    for pair in problem.pairs:
        values = pair_distances(problem, pair, poses)
        index = int(np.argmin(values)) if values.size else None
        if index is not None and values[index] <= d0:
            deepest[pair.pair_id] = (float(times[index]), float(values[index]))
    return deepest


def _strictly_feasible(problem: Problem, params: TrajectoryParams, instants, spec: BarrierSpec) -> bool:
    if problem.limit_barriers and not np.isfinite(limit_barrier(params, problem.chain, spec)[0]):
        return False
    cache = PoseCache(problem.chain, params, (t for _, t in instants))
    for pair_id, t in instants:
        configuration, poses = cache.at(t)
        gap, _ = pair_distance(problem, problem.pairs[pair_id], configuration, poses)
        if gap <= spec.d0:
            return False
    return True


@dataclass(frozen=True, eq=False)
class ExchangeResult:
    params: TrajectoryParams
    log: ConvergenceLog
    instants: tuple[tuple[int, float], ...]
    converged: bool
    rounds: int
    remaining: dict = field(default_factory=dict)


def _solve_sampled(
    problem: Problem,
    instants,
    params: TrajectoryParams,
    spec: BarrierSpec,
    config: SolverConfig,
    epsilon: float,
    log: ConvergenceLog,
    started: float,
) -> tuple[TrajectoryParams, bool]:
    """Barrier continuation on the sampled-constraint problem with Armijo backtracking."""
    terms = [BarrierTerm(pair_id, t, epsilon) for pair_id, t in instants]
    mu = spec.mu
    eps_d = spec.eps_d
    converged = False
    while True:
        current = replace(spec, mu=mu)
        converged = False
        for _ in range(config.max_inner_iterations):
            evaluation = assemble_terms(
                problem, terms, params, current, config.order, num_threads=config.num_threads
            )
            if not evaluation.finite:
                raise ExchangeError("The sampled-constraint iterate left the barrier domain.")
            if np.abs(evaluation.gradient).max(initial=0.0) <= eps_d:
                converged = True
                break

            direction = search_direction(evaluation, config.order)
            slope = float(direction @ evaluation.gradient)
            alpha = spec.alpha0
            while True:
                trial = params.with_theta(params.theta + alpha * direction)
                value = assemble_terms(problem, terms, trial, current, "value").value
                if value <= evaluation.value + spec.c_wolfe * alpha * slope:
                    break
                if alpha < config.min_step:
                    alpha = 0.0
                    break
                alpha *= spec.gamma
            if alpha == 0:
                logger.warning(f"Exchange line search stagnated at {mu=:.3e}.")
                break

            params = trial
            log.append(
                params,
                iteration=len(log),
                energy=value,
                grad_inf=float(np.abs(evaluation.gradient).max()),
                alpha=alpha,
                subdivisions=0,
                active_terms=len(terms),
                mu=mu,
                wall_ms=1000 * (time.perf_counter() - started),
            )
        if mu <= spec.eps_mu:
            return params, converged
        mu *= spec.gamma
        eps_d *= config.eps_d_decay


def exchange_solve(
    problem: Problem,
    spec: BarrierSpec | None = None,
    config: SolverConfig | None = None,
    epsilon: float = 1e-3,
    max_rounds: int = 20,
    params: TrajectoryParams | None = None,
) -> ExchangeResult:
    """Exchange method: grow a set of sampled instants, re-solving after each insertion.

    Only instants on the grid 0, epsilon, 2 epsilon, ... are ever constrained,
    so motion between grid points is unchecked. No subdivision and no safety
    margin are used.
    """
    spec = BarrierSpec() if spec is None else spec
    config = SolverConfig() if config is None else config
    initial = problem.initial_params() if params is None else params
    params = initial

    log = ConvergenceLog()
    started = time.perf_counter()
    instants: list[tuple[int, float]] = []
    converged = False
    remaining = {}

    for round_index in range(1, max_rounds + 1):
        params, converged = _solve_sampled(
            problem, instants, params, spec, config, epsilon, log, started
        )
        remaining = sample_violations(problem, params, epsilon, spec.d0)
        logger.info(
            f"Exchange round {round_index}: {len(instants)} instants, "
            f"{len(remaining)} pairs violated at the sampled instants."
        )
        if not remaining:
            return ExchangeResult(params, log, tuple(instants), converged, round_index)

        instants.extend((pair_id, t) for pair_id, (t, _) in sorted(remaining.items()))

        # Warm start from the latest iterate that is strictly inside the new instant set.
        candidates = [params] + [params.with_theta(theta) for theta in reversed(log.iterates)] + [initial]
        params = next((c for c in candidates if _strictly_feasible(problem, c, instants, spec)), None)
        if params is None:
            raise ExchangeError(
                f"No iterate is strictly feasible on the {len(instants)} sampled instants."
            )

    logger.warning(f"Exchange method stopped after {max_rounds} rounds with sampled violations.")
    return ExchangeResult(params, log, tuple(instants), False, max_rounds, remaining)
