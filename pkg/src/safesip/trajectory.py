"""Composite Bezier trajectories in configuration space.

Each joint follows a piecewise Bezier curve of a fixed degree over `segments`
equal time slices of the horizon. Adjacent segments share their boundary
control point and, under C1 continuity, mirror the neighbouring interior
points. The first control point of every joint is pinned to the start
configuration; the remaining free control points form the decision vector
theta, stored joint-major.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import comb

from safesip.barrier import BarrierSpec, penalty
from safesip.kinematics import KinematicChain

logger = logging.getLogger(__name__)


CONTINUITY_ORDERS = frozenset(["C0", "C1"])


@dataclass(frozen=True)
class ExtractionMatrices:
    """Affine maps from [start, theta_k] to the control points of one joint.

    `control` has shape (N, 1 + F) and `rate` has shape (N - 1, 1 + F), with
    N = segments * degree + 1 control points and F free ones per joint.
    """

    control: np.ndarray
    rate: np.ndarray
    free_indices: tuple[int, ...]

    @property
    def n_free(self) -> int:
        return len(self.free_indices)


@lru_cache(maxsize=64)
def extraction_matrices(
    degree: int, segments: int, horizon: float, continuity: str = "C1"
) -> ExtractionMatrices:
    """Build the control-point and rate extraction matrices for one joint."""
    if degree < 1 or segments < 1:
        raise ValueError(f"Need degree >= 1 and segments >= 1, got {degree=}, {segments=}.")
    if horizon <= 0:
        raise ValueError(f"The horizon must be positive, got {horizon=}.")
    if continuity not in CONTINUITY_ORDERS:
        raise ValueError(f"Unsupported {continuity=}, must be one of {CONTINUITY_ORDERS}.")

    count = segments * degree + 1
    mirrored = set()
    if continuity == "C1":
        mirrored = {s * degree + 1 for s in range(1, segments)}
    free_indices = tuple(i for i in range(1, count) if i not in mirrored)

    control = np.zeros((count, 1 + len(free_indices)))
    control[0, 0] = 1.0
    column = 1
    for i in range(1, count):
        if i in mirrored:
            control[i] = 2 * control[i - 1] - control[i - 2]
        else:
            control[i, column] = 1.0
            column += 1

    # The derivative of a degree-p segment of duration h has control points p/h * (c[i+1] - c[i]).
    duration = horizon / segments
    rate = degree / duration * (control[1:] - control[:-1])

    control.setflags(write=False)
    rate.setflags(write=False)
    return ExtractionMatrices(control, rate, free_indices)


@dataclass(frozen=True, eq=False)
class TrajectoryParams:
    """A composite Bezier trajectory with a pinned start configuration."""

    start: np.ndarray
    theta: np.ndarray
    degree: int = 5
    segments: int = 5
    horizon: float = 5.0
    continuity: str = "C1"
    matrices: ExtractionMatrices = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self,
            "matrices",
            extraction_matrices(self.degree, self.segments, float(self.horizon), self.continuity),
        )
        start = np.asarray(self.start, dtype=float).reshape(-1)
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.size != start.size * self.matrices.n_free:
            raise ValueError(
                f"theta has {theta.size} entries, expected {start.size} joints x "
                f"{self.matrices.n_free} free control points."
            )
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "theta", theta)

    @property
    def n_joints(self) -> int:
        return self.start.size

    @property
    def segment_duration(self) -> float:
        return self.horizon / self.segments

    def with_theta(self, theta) -> "TrajectoryParams":
        return TrajectoryParams(
            self.start, theta, self.degree, self.segments, self.horizon, self.continuity
        )

    def _augmented(self) -> np.ndarray:
        """Rows [start_k, theta_k] per joint, shape (n, 1 + F)."""
        return np.column_stack([self.start, self.theta.reshape(self.n_joints, -1)])

    @property
    def control_points(self) -> np.ndarray:
        """All control points, shape (n, N)."""
        return self._augmented() @ self.matrices.control.T

    @property
    def rate_control_points(self) -> np.ndarray:
        """Control points of the joint-rate curves, shape (n, N - 1)."""
        return self._augmented() @ self.matrices.rate.T

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "segments": self.segments,
            "horizon": float(self.horizon),
            "continuity": self.continuity,
            "start": self.start.tolist(),
            "theta": self.theta.tolist(),
            "control_points": self.control_points.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrajectoryParams":
        return cls(
            start=data["start"],
            theta=data["theta"],
            degree=int(data["degree"]),
            segments=int(data["segments"]),
            horizon=float(data["horizon"]),
            continuity=data.get("continuity", "C1"),
        )


def constant_params(start, degree=5, segments=5, horizon=5.0, continuity="C1") -> TrajectoryParams:
    """A trajectory resting at the start configuration."""
    start = np.asarray(start, dtype=float).reshape(-1)
    n_free = extraction_matrices(degree, segments, float(horizon), continuity).n_free
    return TrajectoryParams(
        start, np.repeat(start, n_free), degree, segments, horizon, continuity
    )


def params_from_control_points(
    control_points, degree=5, segments=5, horizon=5.0, continuity="C1"
) -> TrajectoryParams:
    """Recover theta from a full set of control points of shape (n, N).

    Raises if the control points violate the continuity constraints.
    """
    control_points = np.atleast_2d(np.asarray(control_points, dtype=float))
    matrices = extraction_matrices(degree, segments, float(horizon), continuity)
    if control_points.shape[1] != matrices.control.shape[0]:
        raise ValueError(
            f"Expected {matrices.control.shape[0]} control points per joint, "
            f"got {control_points.shape[1]}."
        )
    theta = control_points[:, list(matrices.free_indices)]
    params = TrajectoryParams(
        control_points[:, 0], theta.reshape(-1), degree, segments, horizon, continuity
    )
    if not np.allclose(params.control_points, control_points, rtol=0.0, atol=1e-9):
        raise ValueError(f"Control points do not satisfy {continuity} continuity.")
    return params


def _locate(params: TrajectoryParams, t) -> tuple[np.ndarray, np.ndarray]:
    """Active segment index and local parameter in [0, 1] for each time."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > params.horizon) or np.any(np.isnan(t)):
        raise ValueError(f"Times must lie in [0, {params.horizon}].")
    scaled = t / params.segment_duration
    index = np.minimum(np.floor(scaled).astype(int), params.segments - 1)
    return index, scaled - index


def _de_casteljau(points: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Evaluate curves with control points on the last axis at local parameters u."""
    while points.shape[-1] > 1:
        points = (1 - u)[..., None] * points[..., :-1] + u[..., None] * points[..., 1:]
    return points[..., 0]


def _evaluate_curves(params: TrajectoryParams, points: np.ndarray, order: int, t) -> np.ndarray:
    index, u = _locate(params, t)
    scalar = index.ndim == 0
    index, u = np.atleast_1d(index), np.atleast_1d(u)

    # Gather the active segment for every time: shape (m, n, order + 1).
    offsets = index[:, None] * params.degree + np.arange(order + 1)
    segment_points = np.moveaxis(points[:, offsets], 0, 1)
    values = _de_casteljau(segment_points, u[:, None])
    return values[0] if scalar else values


def evaluate(params: TrajectoryParams, t) -> np.ndarray:
    """Joint configuration at time t, shape (n,) or (m, n) for an array of times."""
    return _evaluate_curves(params, params.control_points, params.degree, t)


def evaluate_rate(params: TrajectoryParams, t) -> np.ndarray:
    """Joint rates at time t, shape (n,) or (m, n) for an array of times."""
    return _evaluate_curves(params, params.rate_control_points, params.degree - 1, t)


def control_point_weights(params: TrajectoryParams, t: float) -> np.ndarray:
    """Bernstein weights of all N control points at time t."""
    index, u = _locate(params, t)
    index, u = int(index), float(u)
    p = params.degree
    i = np.arange(p + 1)
    weights = np.zeros(params.segments * p + 1)
    weights[index * p : (index + 1) * p + 1] = comb(p, i) * u**i * (1 - u) ** (p - i)
    return weights


def theta_weights(params: TrajectoryParams, t: float) -> np.ndarray:
    """Derivative of one joint's value at time t with respect to its free control points."""
    return control_point_weights(params, t) @ params.matrices.control[:, 1:]


def basis_gradient(params: TrajectoryParams, t: float) -> np.ndarray:
    """Jacobian of the configuration at time t with respect to theta, shape (n, n * F)."""
    return np.kron(np.eye(params.n_joints), theta_weights(params, t))


def limit_barrier(
    params: TrajectoryParams,
    chain: KinematicChain,
    spec: BarrierSpec,
    hessian: bool = False,
):
    """Conservative joint-limit and unit-rate barrier on the control points.

    By the convex-hull property of Bezier curves, keeping every control point
    inside the limits and every rate control point inside (-1, 1) keeps the
    whole trajectory there. Returns (value, gradient) or (value, gradient,
    hessian); the value is infinite when any control point touches a bound.
    """
    if chain.n_joints != params.n_joints:
        raise ValueError(
            f"Chain has {chain.n_joints} joints, trajectory has {params.n_joints}."
        )

    n, n_free = params.n_joints, params.matrices.n_free
    position_map = params.matrices.control[:, 1:]
    rate_map = params.matrices.rate[:, 1:]
    points = params.control_points
    rates = params.rate_control_points

    # (gap, d gap / d point) for the four one-sided bounds.
    sides = [
        (chain.joint_upper[:, None] - points, -1.0, position_map),
        (points - chain.joint_lower[:, None], 1.0, position_map),
        (1.0 - rates, -1.0, rate_map),
        (1.0 + rates, 1.0, rate_map),
    ]

    value = 0.0
    gradient = np.zeros((n, n_free))
    blocks = np.zeros((n, n_free, n_free))
    for gap, sign, mapping in sides:
        p, dp, ddp = penalty(gap, spec)
        if not np.all(np.isfinite(p)):
            value = np.inf
            break
        value += float(p.sum())
        gradient += sign * dp @ mapping
        if hessian:
            blocks += np.einsum("kr,ri,rj->kij", ddp, mapping, mapping)

    if not np.isfinite(value):
        gradient = np.zeros((n, n_free))
        blocks = np.zeros((n, n_free, n_free))

    if hessian:
        full = np.zeros((n * n_free, n * n_free))
        for k in range(n):
            full[k * n_free : (k + 1) * n_free, k * n_free : (k + 1) * n_free] = blocks[k]
        return value, gradient.reshape(-1), full
    return value, gradient.reshape(-1)
