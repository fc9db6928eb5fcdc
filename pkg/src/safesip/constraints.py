"""The semi-infinite collision constraint set.

Every candidate pair (a robot primitive against an obstacle, or two robot
primitives) keeps its own partition of [0, T] into interval leaves. A leaf
stands in for all instants of its interval through a single surrogate
constraint at the interval midpoint. The safety check certifies a whole
interval from that midpoint using the Lipschitz bound of the pair, and
failing leaves are subdivided.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from safesip.barrier import BarrierSpec, penalty
from safesip.geometry import Obstacle, Primitive, batch_distance, distance
from safesip.kinematics import (
    KinematicChain,
    forward_kinematics,
    lipschitz_table,
    point_jacobian,
)
from safesip.objectives import Objective
from safesip.trajectory import (
    TrajectoryParams,
    constant_params,
    evaluate,
    limit_barrier,
    theta_weights,
)

logger = logging.getLogger(__name__)


ENERGY_ORDERS = frozenset(["value", "first", "second"])
NUM_THREADS_VARIABLE = "SAFESIP_NUM_THREADS"
BVH_LEAF_SIZE = 4
DEFAULT_INITIAL_SPLITS = 8


@dataclass(frozen=True, eq=False)
class ContainmentProbe:
    """Axis-aligned box that a link-fixed point should occupy at t = T."""

    link: int
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        for name in ("point", "lower", "upper"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        if not np.all(self.lower < self.upper):
            raise ValueError("Probe bounds must satisfy lower < upper elementwise.")

    def position(self, chain: KinematicChain, params: TrajectoryParams) -> np.ndarray:
        pose = forward_kinematics(chain, evaluate(params, params.horizon))[self.link]
        return pose[:3, :3] @ self.point + pose[:3, 3]

    def contains(self, chain: KinematicChain, params: TrajectoryParams) -> bool:
        position = self.position(chain, params)
        return bool(np.all(position >= self.lower) and np.all(position <= self.upper))


@dataclass(frozen=True)
class CollisionPair:
    """A robot primitive paired with an obstacle or with another robot primitive."""

    pair_id: int
    link: int
    primitive: int
    lipschitz: float
    obstacle: int | None = None
    other_link: int | None = None
    other_primitive: int | None = None
    other_lipschitz: float = 0.0

    @property
    def is_self(self) -> bool:
        return self.other_link is not None

    @property
    def lipschitz_sum(self) -> float:
        return self.lipschitz + self.other_lipschitz

    @property
    def label(self) -> str:
        moving = f"link{self.link}.{self.primitive}"
        if self.is_self:
            return f"{moving}~link{self.other_link}.{self.other_primitive}"
        return f"{moving}~obstacle{self.obstacle}"


@dataclass(frozen=True, eq=False)
class Problem:
    """A trajectory optimization problem: robot, environment, objective and parameterization."""

    chain: KinematicChain
    obstacles: tuple[Obstacle, ...]
    start: np.ndarray
    objective: Objective
    degree: int = 5
    segments: int = 5
    horizon: float = 5.0
    continuity: str = "C1"
    self_collision: bool = False
    include_adjacent: bool = False
    limit_barriers: bool = True
    probe: ContainmentProbe | None = None
    name: str = "scene"

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        start = np.asarray(self.start, dtype=float).reshape(-1)
        if start.size != self.chain.n_joints:
            raise ValueError(
                f"The start configuration has {start.size} entries, chain has {self.chain.n_joints} joints."
            )
        object.__setattr__(self, "start", start)

    def initial_params(self) -> TrajectoryParams:
        return constant_params(self.start, self.degree, self.segments, self.horizon, self.continuity)

    @cached_property
    def pairs(self) -> tuple[CollisionPair, ...]:
        return candidate_pairs(self)

    def primitive(self, link: int, index: int) -> Primitive:
        return self.chain.links[link][index]


def candidate_pairs(problem: Problem) -> tuple[CollisionPair, ...]:
    """Every robot/obstacle pair followed by the enabled self-collision pairs."""
    chain = problem.chain
    bounds = lipschitz_table(chain)
    pairs = []
    for (link, primitive), bound in bounds.items():
        for obstacle in range(len(problem.obstacles)):
            pairs.append(CollisionPair(len(pairs), link, primitive, bound, obstacle=obstacle))

    if problem.self_collision:
        moving = list(bounds.items())
        for index, ((link_a, primitive_a), bound_a) in enumerate(moving):
            for (link_b, primitive_b), bound_b in moving[index + 1 :]:
                if link_a == link_b:
                    continue
                if not problem.include_adjacent and chain.adjacent(link_a, link_b):
                    continue
                pairs.append(
                    CollisionPair(
                        len(pairs),
                        link_a,
                        primitive_a,
                        bound_a,
                        other_link=link_b,
                        other_primitive=primitive_b,
                        other_lipschitz=bound_b,
                    )
                )
    return tuple(pairs)


@dataclass(frozen=True, order=True)
class IntervalLeaf:
    """One surrogate constraint: a pair over the time interval [t0, t1].

    Self-collision pairs keep one track per primitive; obstacle pairs only use track 0.
    """

    pair_id: int
    track: int
    t0: float
    t1: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.t0 + self.t1)

    @property
    def length(self) -> float:
        return self.t1 - self.t0


def init_intervals(problem: Problem, initial_splits: int = DEFAULT_INITIAL_SPLITS) -> tuple[IntervalLeaf, ...]:
    """Uniform partition of [0, T] into `initial_splits` leaves for every candidate pair."""
    if initial_splits < 1:
        raise ValueError(f"'initial_splits' must be at least 1, got {initial_splits}.")

    edges = [problem.horizon * i / initial_splits for i in range(initial_splits + 1)]
    leaves = []
    for pair in problem.pairs:
        for track in (0, 1) if pair.is_self else (0,):
            leaves.extend(
                IntervalLeaf(pair.pair_id, track, t0, t1) for t0, t1 in zip(edges[:-1], edges[1:])
            )
    logger.debug(f"Initialized {len(leaves)} leaves for {len(problem.pairs)} pairs.")
    return tuple(sorted(leaves))


def subdivide(leaves: tuple[IntervalLeaf, ...], leaf: IntervalLeaf) -> tuple[IntervalLeaf, ...]:
    """Replace `leaf` by its two halves, leaving every other leaf untouched."""
    if leaf not in leaves:
        raise ValueError(f"Leaf {leaf} is not part of the interval set.")
    middle = leaf.midpoint
    halves = [replace(leaf, t1=middle), replace(leaf, t0=middle)]
    return tuple(sorted([other for other in leaves if other != leaf] + halves))


def _refine(t0: float, t1: float, breakpoints: list[float], depth: int = 0) -> list[tuple[float, float]]:
    if not any(t0 < point < t1 for point in breakpoints):
        return [(t0, t1)]
    if depth > 64:
        raise ValueError(f"Interval [{t0}, {t1}] cannot be matched by midpoint splits.")
    middle = 0.5 * (t0 + t1)
    return _refine(t0, middle, breakpoints, depth + 1) + _refine(middle, t1, breakpoints, depth + 1)


def reconcile_self_pair(leaves: tuple[IntervalLeaf, ...], pair_id: int) -> tuple[IntervalLeaf, ...]:
    """Split the coarser track of a self-collision pair until both tracks share boundaries."""
    own = [leaf for leaf in leaves if leaf.pair_id == pair_id]
    tracks = {leaf.track for leaf in own}
    if tracks != {0, 1}:
        raise ValueError(f"Pair {pair_id} is not a self-collision pair with two tracks.")

    breakpoints = sorted({t for leaf in own for t in (leaf.t0, leaf.t1)})
    refined = {
        track: sorted(
            interval
            for leaf in own
            if leaf.track == track
            for interval in _refine(leaf.t0, leaf.t1, breakpoints)
        )
        for track in (0, 1)
    }
    if refined[0] != refined[1]:
        raise ValueError(f"Tracks of pair {pair_id} do not cover the same time span.")

    others = [leaf for leaf in leaves if leaf.pair_id != pair_id]
    matched = [IntervalLeaf(pair_id, track, t0, t1) for track in (0, 1) for t0, t1 in refined[track]]
    return tuple(sorted(others + matched))


def psi(length, lipschitz_sum: float, spec: BarrierSpec):
    """Safety margin L * x / 2 + L2 * x^eta for an interval of length x."""
    length = np.asarray(length, dtype=float)
    return (lipschitz_sum * length / 2 + spec.L2 * length**spec.eta)[()]


class PoseCache:
    """Configurations and link poses at the instants one evaluation touches."""

    def __init__(self, chain: KinematicChain, params: TrajectoryParams, times):
        self.times = np.unique(np.asarray(list(times), dtype=float))
        if self.times.size:
            self.configurations = evaluate(params, self.times)
            self.poses = forward_kinematics(chain, self.configurations)
        else:
            self.configurations = np.zeros((0, chain.n_joints))
            self.poses = np.zeros((0, chain.n_joints, 4, 4))
        self._index = {float(t): i for i, t in enumerate(self.times)}

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        index = self._index[float(t)]
        return self.configurations[index], self.poses[index]


def _counterpart(problem: Problem, pair: CollisionPair, poses: np.ndarray) -> tuple[Primitive, np.ndarray]:
    if pair.is_self:
        return problem.primitive(pair.other_link, pair.other_primitive), poses[..., pair.other_link, :, :]
    obstacle = problem.obstacles[pair.obstacle]
    return obstacle.primitive, obstacle.pose


def _vertex_chain_rule(chain, configuration, poses, link, primitive, vertex_gradients) -> np.ndarray:
    """Pull per-vertex distance gradients back to joint space."""
    gradient = np.zeros(chain.n_joints)
    for vertex, grad in zip(primitive.vertices, vertex_gradients):
        if grad.any():
            gradient += grad @ point_jacobian(chain, configuration, link, vertex, poses=poses)
    return gradient


def pair_distance(
    problem: Problem,
    pair: CollisionPair,
    configuration: np.ndarray,
    poses: np.ndarray,
    gradient: bool = False,
) -> tuple[float, np.ndarray | None]:
    """Distance of a pair at one configuration and, optionally, its joint-space gradient."""
    moving = problem.primitive(pair.link, pair.primitive)
    other, other_pose = _counterpart(problem, pair, poses)
    result = distance(moving, poses[pair.link], other, other_pose)
    if not gradient:
        return result.distance, None

    chain = problem.chain
    joint_gradient = _vertex_chain_rule(
        chain, configuration, poses, pair.link, moving, result.grad_vertices_a
    )
    if pair.is_self:
        joint_gradient += _vertex_chain_rule(
            chain, configuration, poses, pair.other_link, other, result.grad_vertices_b
        )
    return result.distance, joint_gradient


def pair_distances(problem: Problem, pair: CollisionPair, poses: np.ndarray) -> np.ndarray:
    """Distances of a pair over a batch of link poses of shape (m, n, 4, 4)."""
    moving = problem.primitive(pair.link, pair.primitive)
    other, other_pose = _counterpart(problem, pair, poses)
    return batch_distance(moving, poses[:, pair.link], other, other_pose)


class _BvhNode:
    __slots__ = ("lower", "upper", "items", "left", "right")

    def __init__(self, lower, upper, items=(), left=None, right=None):
        self.lower = lower
        self.upper = upper
        self.items = items
        self.left = left
        self.right = right


class STBvh:
    """Bounding volume hierarchy over space-time boxes of interval leaves.

    Each leaf box encloses its primitive at the interval midpoint, inflated by
    the sweep radius plus the distance the primitive can travel in half the
    interval. Internal nodes split at the median along their longest axis.
    """

    def __init__(self, leaves, lower: np.ndarray, upper: np.ndarray, leaf_size: int = BVH_LEAF_SIZE):
        self.leaves = tuple(leaves)
        self._lower = np.asarray(lower, dtype=float).reshape(-1, 3)
        self._upper = np.asarray(upper, dtype=float).reshape(-1, 3)
        self.leaf_size = leaf_size
        self.root = self._build(np.arange(len(self.leaves))) if self.leaves else None

    def _build(self, indices: np.ndarray) -> _BvhNode:
        lower = self._lower[indices].min(axis=0)
        upper = self._upper[indices].max(axis=0)
        if len(indices) <= self.leaf_size:
            return _BvhNode(lower, upper, items=tuple(int(i) for i in indices))

        axis = int(np.argmax(upper - lower))
        centers = 0.5 * (self._lower[indices, axis] + self._upper[indices, axis])
        ordered = indices[np.argsort(centers, kind="stable")]
        half = len(ordered) // 2
        return _BvhNode(lower, upper, left=self._build(ordered[:half]), right=self._build(ordered[half:]))

    def query(self, lower, upper) -> list[IntervalLeaf]:
        """Leaves whose box overlaps the axis-aligned box [lower, upper], in leaf order."""
        if self.root is None:
            return []
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        hits = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if np.any(node.lower > upper) or np.any(node.upper < lower):
                continue
            if node.left is None:
                hits.extend(
                    i
                    for i in node.items
                    if np.all(self._lower[i] <= upper) and np.all(self._upper[i] >= lower)
                )
            else:
                stack.extend([node.left, node.right])
        return sorted(self.leaves[i] for i in hits)

    @classmethod
    def from_leaves(cls, problem: Problem, leaves, cache: PoseCache) -> "STBvh":
        leaves = list(leaves)
        lower = np.zeros((len(leaves), 3))
        upper = np.zeros((len(leaves), 3))
        for row, leaf in enumerate(leaves):
            pair = problem.pairs[leaf.pair_id]
            primitive = problem.primitive(pair.link, pair.primitive)
            _, poses = cache.at(leaf.midpoint)
            vertices = primitive.world_vertices(poses[pair.link])
            inflation = primitive.sweep_radius + pair.lipschitz * leaf.length / 2
            lower[row] = vertices.min(axis=0) - inflation
            upper[row] = vertices.max(axis=0) + inflation
        return cls(leaves, lower, upper)


def _obstacle_boxes(problem: Problem, margin: float) -> list[tuple[np.ndarray, np.ndarray]]:
    boxes = []
    for obstacle in problem.obstacles:
        vertices = obstacle.primitive.world_vertices(obstacle.pose)
        inflation = obstacle.primitive.sweep_radius + margin
        boxes.append((vertices.min(axis=0) - inflation, vertices.max(axis=0) + inflation))
    return boxes


def _candidate_leaves(problem: Problem, leaves, cache: PoseCache, margin: float) -> list[IntervalLeaf]:
    """Obstacle leaves whose box comes within `margin` of their obstacle, plus every self leaf."""
    obstacle_leaves = []
    self_leaves = []
    for leaf in leaves:
        if problem.pairs[leaf.pair_id].is_self:
            if leaf.track == 0:
                self_leaves.append(leaf)
        else:
            obstacle_leaves.append(leaf)

    bvh = STBvh.from_leaves(problem, obstacle_leaves, cache)
    candidates = set(self_leaves)
    for index, (lower, upper) in enumerate(_obstacle_boxes(problem, margin)):
        candidates.update(
            leaf for leaf in bvh.query(lower, upper) if problem.pairs[leaf.pair_id].obstacle == index
        )
    return sorted(candidates)


def _leaf_cache(problem: Problem, leaves, params: TrajectoryParams, cache: PoseCache | None) -> PoseCache:
    if cache is None:
        cache = PoseCache(problem.chain, params, (leaf.midpoint for leaf in leaves))
    return cache


def active_terms(
    problem: Problem,
    leaves,
    params: TrajectoryParams,
    spec: BarrierSpec,
    cache: PoseCache | None = None,
) -> list[IntervalLeaf]:
    """Leaves whose midpoint distance may lie inside the barrier support, d < d0 + x0."""
    cache = _leaf_cache(problem, leaves, params, cache)
    return _candidate_leaves(problem, leaves, cache, spec.d0 + spec.x0)


def safety_violations(
    problem: Problem,
    leaves,
    params: TrajectoryParams,
    spec: BarrierSpec,
    first_only: bool = False,
    cache: PoseCache | None = None,
) -> list[IntervalLeaf]:
    """All leaves, in leaf order, whose midpoint distance is at most d0 + psi(length).

    Leaves pruned by the hierarchy are certified: their boxes already keep the
    obstacle farther than d0 + psi away.
    """
    leaves = list(leaves)
    if not leaves:
        return []
    cache = _leaf_cache(problem, leaves, params, cache)
    longest = max(leaf.length for leaf in leaves)
    margin = spec.d0 + spec.L2 * longest**spec.eta

    violations = []
    for leaf in _candidate_leaves(problem, leaves, cache, margin):
        pair = problem.pairs[leaf.pair_id]
        configuration, poses = cache.at(leaf.midpoint)
        gap, _ = pair_distance(problem, pair, configuration, poses)
        if gap <= spec.d0 + psi(leaf.length, pair.lipschitz_sum, spec):
            violations.append(leaf)
            if first_only:
                break
    return violations


def safety_check(
    problem: Problem, leaves, params: TrajectoryParams, spec: BarrierSpec
) -> IntervalLeaf | None:
    """First violating leaf by (pair id, track, t0), or None when every interval is certified safe."""
    violations = safety_violations(problem, leaves, params, spec, first_only=True)
    return violations[0] if violations else None


@dataclass(frozen=True)
class BarrierTerm:
    """A weighted point constraint of the barrier sum."""

    pair_id: int
    time: float
    weight: float


@dataclass(frozen=True, eq=False)
class EnergyEvaluation:
    value: float
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None
    active_terms: int = 0

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value))


def modulate_hessian(hessian: np.ndarray, spec: BarrierSpec) -> np.ndarray:
    """Clamp the eigenvalues of the symmetrized Hessian to [beta_min, beta_max]."""
    symmetric = 0.5 * (hessian + hessian.T)
    values, vectors = np.linalg.eigh(symmetric)
    values = np.clip(values, spec.beta_min, spec.beta_max)
    return (vectors * values) @ vectors.T


def resolve_num_threads(num_threads: int | None = None) -> int:
    """Explicit thread count, else the SAFESIP_NUM_THREADS environment variable, else 1."""
    if num_threads is None:
        raw = os.environ.get(NUM_THREADS_VARIABLE, "1")
        try:
            num_threads = int(raw)
        except ValueError:
            raise ValueError(f"{NUM_THREADS_VARIABLE} must be an integer, got {raw!r}.") from None
    if num_threads < 1:
        raise ValueError(f"The thread count must be at least 1, got {num_threads}.")
    return num_threads


def ordered_map(function, items, num_threads: int) -> list:
    """Map preserving input order so reductions are independent of the thread count."""
    if num_threads == 1 or len(items) < 2:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=num_threads) as pool:
        return list(pool.map(function, items))


def _barrier_contribution(problem, params, cache, spec, order, term: BarrierTerm):
    """mu * weight * P(d - d0) with derivatives in theta; None when the term is infeasible."""
    pair = problem.pairs[term.pair_id]
    configuration, poses = cache.at(term.time)
    gap, joint_gradient = pair_distance(problem, pair, configuration, poses, gradient=order != "value")
    value, first, second = penalty(gap - spec.d0, spec)
    if not np.isfinite(value):
        return None

    scale = spec.mu * term.weight
    if order == "value" or (value == 0 and first == 0):
        return scale * value, None, None

    direction = np.kron(joint_gradient, theta_weights(params, term.time))
    hessian = scale * second * np.outer(direction, direction) if order == "second" else None
    return scale * value, scale * first * direction, hessian


def assemble_terms(
    problem: Problem,
    terms,
    params: TrajectoryParams,
    spec: BarrierSpec,
    order: str = "first",
    objective: Objective | None = None,
    num_threads: int | None = None,
    cache: PoseCache | None = None,
) -> EnergyEvaluation:
    """E = O + mu * sum(weight * P(d - d0)) + mu * limit barriers over explicit point terms."""
    if order not in ENERGY_ORDERS:
        raise ValueError(f"Unsupported {order=}, must be one of {ENERGY_ORDERS}.")
    objective = problem.objective if objective is None else objective
    chain = problem.chain
    terms = list(terms)
    need_hessian = order == "second"

    value, gradient, hessian = objective.evaluate(params, chain, hessian=need_hessian)
    if not np.isfinite(value) or not np.all(np.isfinite(gradient)):
        raise ValueError(f"The objective is not finite at the current parameters ({value=}).")

    infinite = EnergyEvaluation(np.inf, active_terms=len(terms))
    if problem.limit_barriers:
        limits = limit_barrier(params, chain, spec, hessian=need_hessian)
        if not np.isfinite(limits[0]):
            return infinite
        value += spec.mu * limits[0]
        gradient = gradient + spec.mu * limits[1]
        if need_hessian:
            hessian = hessian + spec.mu * limits[2]

    if cache is None:
        cache = PoseCache(chain, params, (term.time for term in terms))
    contributions = ordered_map(
        lambda term: _barrier_contribution(problem, params, cache, spec, order, term),
        terms,
        resolve_num_threads(num_threads),
    )
    for contribution in contributions:
        if contribution is None:
            return infinite
        term_value, term_gradient, term_hessian = contribution
        value += term_value
        if term_gradient is not None:
            gradient = gradient + term_gradient
        if term_hessian is not None:
            hessian = hessian + term_hessian

    if order == "value":
        return EnergyEvaluation(float(value), active_terms=len(terms))
    if need_hessian:
        hessian = modulate_hessian(hessian, spec)
    return EnergyEvaluation(float(value), gradient, hessian, len(terms))


def assemble_energy(
    problem: Problem,
    leaves,
    params: TrajectoryParams,
    spec: BarrierSpec,
    order: str = "first",
    objective: Objective | None = None,
    num_threads: int | None = None,
) -> EnergyEvaluation:
    """Interior-point energy with one midpoint term per active leaf, weighted by its length."""
    leaves = list(leaves)
    cache = PoseCache(problem.chain, params, (leaf.midpoint for leaf in leaves))
    terms = [
        BarrierTerm(leaf.pair_id, leaf.midpoint, leaf.length)
        for leaf in active_terms(problem, leaves, params, spec, cache=cache)
    ]
    return assemble_terms(problem, terms, params, spec, order, objective, num_threads, cache)
