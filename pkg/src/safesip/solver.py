"""Feasible interior-point method for the semi-infinite trajectory problem.

The outer loop shrinks the barrier weight mu; the inner loop takes descent
steps whose line search only accepts trial points that pass the safety check.
When the check blocks arbitrarily small steps, the offending interval is
subdivided instead. Every accepted iterate is therefore certified
collision-free over the whole time horizon.
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import scipy.linalg

from safesip.barrier import BarrierSpec
from safesip.constraints import (
    DEFAULT_INITIAL_SPLITS,
    EnergyEvaluation,
    IntervalLeaf,
    Problem,
    assemble_energy,
    init_intervals,
    reconcile_self_pair,
    safety_check,
    safety_violations,
    subdivide,
)
from safesip.trajectory import TrajectoryParams, limit_barrier

logger = logging.getLogger(__name__)


DIRECTION_ORDERS = frozenset(["first", "second"])
LOG_COLUMNS = [
    "iteration",
    "energy",
    "grad_inf",
    "alpha",
    "subdivisions",
    "active_terms",
    "mu",
    "wall_ms",
]


class InfeasibleInitialGuessError(ValueError):
    """The initial trajectory collides or cannot be certified safe."""

    def __init__(self, message: str, pair: str | None = None, time: float | None = None):
        super().__init__(message)
        self.pair = pair
        self.time = time


class StallError(RuntimeError):
    """The line search exceeded its cap on shrink and subdivision events."""


@dataclass(frozen=True)
class SolverConfig:
    order: str = "second"
    initial_splits: int = DEFAULT_INITIAL_SPLITS
    max_initial_rounds: int = 32
    max_events: int = 10**6
    max_inner_iterations: int = 200
    min_step: float = 1e-14
    eps_d_decay: float = 1.0
    # After every accepted step eps_alpha grows by this factor, capped at its initial value.
    eps_alpha_growth: float = 1.0
    num_threads: int | None = None

    def __post_init__(self):
        if self.order not in DIRECTION_ORDERS:
            raise ValueError(f"Unsupported order={self.order!r}, must be one of {DIRECTION_ORDERS}.")
        if self.initial_splits < 1:
            raise ValueError(f"'initial_splits' must be at least 1, got {self.initial_splits}.")
        for name in ("max_initial_rounds", "max_events", "max_inner_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"'{name}' must be at least 1, got {getattr(self, name)}.")
        if self.min_step < 0:
            raise ValueError(f"'min_step' must be non-negative, got {self.min_step}.")
        if not (0 < self.eps_d_decay <= 1):
            raise ValueError(f"'eps_d_decay' must lie in (0, 1], got {self.eps_d_decay}.")
        if self.eps_alpha_growth < 1:
            raise ValueError(f"'eps_alpha_growth' must be at least 1, got {self.eps_alpha_growth}.")


@dataclass
class ConvergenceLog:
    """Append-only record of accepted iterates."""

    records: list[dict] = field(default_factory=list)
    iterates: list[np.ndarray] = field(default_factory=list)

    def append(self, params: TrajectoryParams, **record):
        self.records.append({column: record[column] for column in LOG_COLUMNS})
        self.iterates.append(params.theta.copy())

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=LOG_COLUMNS)

    def deterministic_frame(self) -> pd.DataFrame:
        """The log without its wall-clock column."""
        return self.to_frame().drop(columns="wall_ms")

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)


@dataclass
class SolverState:
    params: TrajectoryParams
    mu: float
    eps_alpha: float
    leaves: tuple[IntervalLeaf, ...]
    log: ConvergenceLog = field(default_factory=ConvergenceLog)
    subdivisions: int = 0
    events: int = 0


@dataclass(frozen=True, eq=False)
class LineSearchResult:
    alpha: float
    direction: np.ndarray
    evaluation: EnergyEvaluation


@dataclass(frozen=True, eq=False)
class SolveResult:
    params: TrajectoryParams
    log: ConvergenceLog
    leaves: tuple[IntervalLeaf, ...]
    converged: bool

    @property
    def subdivisions(self) -> int:
        return int(self.log.records[-1]["subdivisions"]) if self.log.records else 0


def _spec_at(spec: BarrierSpec, mu: float) -> BarrierSpec:
    return spec if mu == spec.mu else replace(spec, mu=mu)


def evaluate_state(
    problem: Problem, state: SolverState, spec: BarrierSpec, config: SolverConfig, order: str | None = None
) -> EnergyEvaluation:
    return assemble_energy(
        problem,
        state.leaves,
        state.params,
        _spec_at(spec, state.mu),
        order=order or config.order,
        num_threads=config.num_threads,
    )


def search_direction(evaluation: EnergyEvaluation, order: str = "second") -> np.ndarray:
    """Steepest descent, or the Newton step on the modulated Hessian."""
    if order not in DIRECTION_ORDERS:
        raise ValueError(f"Unsupported {order=}, must be one of {DIRECTION_ORDERS}.")
    gradient = evaluation.gradient
    if gradient is None or not np.all(np.isfinite(gradient)):
        raise ValueError("A search direction needs a finite gradient.")
    if not gradient.any():
        return np.zeros_like(gradient)
    if order == "first":
        return -gradient
    if evaluation.hessian is None:
        raise ValueError("A second-order direction needs the modulated Hessian.")
    return scipy.linalg.solve(evaluation.hessian, -gradient, assume_a="pos")


def _subdivide_state(problem: Problem, state: SolverState, leaf: IntervalLeaf):
    state.leaves = subdivide(state.leaves, leaf)
    if problem.pairs[leaf.pair_id].is_self:
        state.leaves = reconcile_self_pair(state.leaves, leaf.pair_id)
    state.subdivisions += 1


def line_search(
    problem: Problem,
    state: SolverState,
    evaluation: EnergyEvaluation,
    direction: np.ndarray,
    spec: BarrierSpec,
    config: SolverConfig,
) -> LineSearchResult:
    """Backtracking search that only accepts safe trial points.

    A safety failure shrinks the step until it reaches eps_alpha; from then on
    each failure shrinks eps_alpha, subdivides the violating leaf, and
    re-evaluates the energy and direction without resetting the step. The
    state's leaves and eps_alpha are updated in place. A step of zero signals
    that the trial step became negligible without satisfying the decrease test.
    """
    alpha = spec.alpha0
    current = _spec_at(spec, state.mu)
    events = 0
    while True:
        events += 1
        state.events += 1
        if events > config.max_events:
            raise StallError(f"Line search exceeded {config.max_events} shrink and subdivision events.")

        trial = state.params.with_theta(state.params.theta + alpha * direction)
        violating = safety_check(problem, state.leaves, trial, current)
        if violating is not None:
            if alpha <= state.eps_alpha:
                state.eps_alpha = max(state.eps_alpha * spec.gamma, spec.eps_alpha_floor)
                _subdivide_state(problem, state, violating)
                logger.debug(
                    f"Subdivided {problem.pairs[violating.pair_id].label} on "
                    f"[{violating.t0:.6g}, {violating.t1:.6g}] at {alpha=:.3e}"
                )
                evaluation = evaluate_state(problem, state, spec, config)
                direction = search_direction(evaluation, config.order)
            else:
                alpha *= spec.gamma
            continue

        trial_value = assemble_energy(
            problem, state.leaves, trial, current, order="value", num_threads=config.num_threads
        ).value
        decrease = spec.c_wolfe * alpha * float(direction @ evaluation.gradient)
        if trial_value <= evaluation.value + decrease:
            return LineSearchResult(alpha, direction, evaluation)
        if alpha < config.min_step:
            logger.debug(f"Line search stagnated at {alpha=:.3e}.")
            return LineSearchResult(0.0, direction, evaluation)
        alpha *= spec.gamma


def prepare_initial_state(
    problem: Problem, spec: BarrierSpec, config: SolverConfig, params: TrajectoryParams | None = None
) -> SolverState:
    """Check the initial trajectory and subdivide until it passes the safety check."""
    params = problem.initial_params() if params is None else params
    if problem.limit_barriers and not np.isfinite(limit_barrier(params, problem.chain, spec)[0]):
        raise InfeasibleInitialGuessError("The initial trajectory touches a joint or rate limit.")

    state = SolverState(params, spec.mu, spec.eps_alpha, init_intervals(problem, config.initial_splits))
    for round_index in range(config.max_initial_rounds + 1):
        violations = safety_violations(problem, state.leaves, params, spec)
        if not violations:
            logger.info(
                f"Initial trajectory certified safe after {round_index} rounds "
                f"({len(state.leaves)} leaves)."
            )
            return state
        if round_index == config.max_initial_rounds:
            break
        for leaf in violations:
            if leaf in state.leaves:
                _subdivide_state(problem, state, leaf)

    leaf = violations[0]
    pair = problem.pairs[leaf.pair_id].label
    raise InfeasibleInitialGuessError(
        f"Initial trajectory is not safe for {pair} near t={leaf.midpoint:.6g} "
        f"after {config.max_initial_rounds} subdivision rounds.",
        pair=pair,
        time=leaf.midpoint,
    )


def solve(
    problem: Problem,
    spec: BarrierSpec | None = None,
    config: SolverConfig | None = None,
    params: TrajectoryParams | None = None,
) -> SolveResult:
    """Run the feasible interior-point method from a feasible initial trajectory."""
    spec = BarrierSpec() if spec is None else spec
    config = SolverConfig() if config is None else config

    state = prepare_initial_state(problem, spec, config, params)
    started = time.perf_counter()
    eps_d = spec.eps_d
    iteration = 0

    evaluation = evaluate_state(problem, state, spec, config)
    state.log.append(
        state.params,
        iteration=0,
        energy=evaluation.value,
        grad_inf=float(np.abs(evaluation.gradient).max(initial=0.0)),
        alpha=0.0,
        subdivisions=state.subdivisions,
        active_terms=evaluation.active_terms,
        mu=state.mu,
        wall_ms=0.0,
    )

    while True:
        converged = False
        for _ in range(config.max_inner_iterations):
            evaluation = evaluate_state(problem, state, spec, config)
            if np.abs(evaluation.gradient).max(initial=0.0) <= eps_d:
                converged = True
                break

            direction = search_direction(evaluation, config.order)
            result = line_search(problem, state, evaluation, direction, spec, config)
            if result.alpha == 0:
                logger.warning(f"Line search stagnated at mu={state.mu:.3e}; moving to the next mu.")
                break

            state.params = state.params.with_theta(state.params.theta + result.alpha * result.direction)
            state.eps_alpha = min(state.eps_alpha * config.eps_alpha_growth, spec.eps_alpha)
            iteration += 1
            evaluation = evaluate_state(problem, state, spec, config, order="first")
            state.log.append(
                state.params,
                iteration=iteration,
                energy=evaluation.value,
                grad_inf=float(np.abs(evaluation.gradient).max(initial=0.0)),
                alpha=result.alpha,
                subdivisions=state.subdivisions,
                active_terms=evaluation.active_terms,
                mu=state.mu,
                wall_ms=1000 * (time.perf_counter() - started),
            )
            logger.debug(
                f"iteration {iteration}: E={evaluation.value:.6e} alpha={result.alpha:.3e} "
                f"leaves={len(state.leaves)}"
            )
        else:
            logger.warning(
                f"Reached {config.max_inner_iterations} inner iterations at mu={state.mu:.3e}."
            )

        logger.info(
            f"mu={state.mu:.3e}: {iteration} iterations, {state.subdivisions} subdivisions, "
            f"{converged=}"
        )
        if state.mu <= spec.eps_mu:
            break
        state.mu *= spec.gamma
        eps_d *= config.eps_d_decay

    return SolveResult(state.params, state.log, state.leaves, converged)
