import logging
from dataclasses import dataclass

import numpy as np

from safesip.kinematics import KinematicChain, forward_kinematics, point_jacobian
from safesip.trajectory import TrajectoryParams, evaluate, theta_weights

logger = logging.getLogger(__name__)


class Objective:
    """Smooth trajectory cost O(theta).

    `evaluate` returns (value, gradient, hessian); the hessian is None unless
    `hessian=True` and is a positive semidefinite Gauss-Newton approximation.
    """

    def evaluate(self, params: TrajectoryParams, chain: KinematicChain, hessian: bool = False):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class TargetObjective(Objective):
    """Squared distance of a link-fixed point to a target position at t = T."""

    link: int
    point: np.ndarray
    target: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float).reshape(3))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float).reshape(3))
        if self.weight < 0:
            raise ValueError(f"Objective weight must be non-negative, got {self.weight}.")

    def position(self, params: TrajectoryParams, chain: KinematicChain) -> np.ndarray:
        """World position of the tracked point at the end of the horizon."""
        pose = forward_kinematics(chain, evaluate(params, params.horizon))[self.link]
        return pose[:3, :3] @ self.point + pose[:3, 3]

    def evaluate(self, params, chain, hessian=False):
        configuration = evaluate(params, params.horizon)
        poses = forward_kinematics(chain, configuration)
        position = poses[self.link, :3, :3] @ self.point + poses[self.link, :3, 3]
        jacobian = point_jacobian(chain, configuration, self.link, self.point, poses=poses)
        weights = theta_weights(params, params.horizon)

        residual = position - self.target
        value = self.weight * float(residual @ residual)
        gradient = np.kron(2 * self.weight * jacobian.T @ residual, weights)
        if not hessian:
            return value, gradient, None
        return value, gradient, np.kron(2 * self.weight * jacobian.T @ jacobian, np.outer(weights, weights))


@dataclass(frozen=True, eq=False)
class PotentialObjective(Objective):
    """Height of a link-fixed point along `up` at t = T, a uniform gravity potential.

    The value is linear in the final pose, so its Gauss-Newton Hessian is zero.
    """

    link: int
    point: np.ndarray
    up: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float).reshape(3))
        up = np.asarray(self.up, dtype=float).reshape(3)
        norm = np.linalg.norm(up)
        if norm == 0:
            raise ValueError("The potential direction must be nonzero.")
        object.__setattr__(self, "up", up / norm)
        if self.weight < 0:
            raise ValueError(f"Objective weight must be non-negative, got {self.weight}.")

    def evaluate(self, params, chain, hessian=False):
        configuration = evaluate(params, params.horizon)
        poses = forward_kinematics(chain, configuration)
        position = poses[self.link, :3, :3] @ self.point + poses[self.link, :3, 3]
        jacobian = point_jacobian(chain, configuration, self.link, self.point, poses=poses)
        weights = theta_weights(params, params.horizon)

        value = self.weight * float(self.up @ position)
        gradient = np.kron(self.weight * jacobian.T @ self.up, weights)
        if not hessian:
            return value, gradient, None
        return value, gradient, np.zeros((gradient.size, gradient.size))


@dataclass(frozen=True, eq=False)
class SmoothnessObjective(Objective):
    """Laplacian smoothness: squared second differences of every joint's control points."""

    weight: float = 1.0

    def evaluate(self, params, chain, hessian=False):
        n, n_free = params.n_joints, params.matrices.n_free
        points = params.control_points
        count = points.shape[1]
        if count < 3 or self.weight == 0:
            return 0.0, np.zeros(n * n_free), np.zeros((n * n_free, n * n_free)) if hessian else None

        laplacian = np.diff(np.eye(count), n=2, axis=0)
        mapping = laplacian @ params.matrices.control[:, 1:]
        residual = points @ laplacian.T
        value = self.weight * float(np.sum(residual**2))
        gradient = (2 * self.weight * residual @ mapping).reshape(-1)
        if not hessian:
            return value, gradient, None
        return value, gradient, np.kron(np.eye(n), 2 * self.weight * mapping.T @ mapping)


@dataclass(frozen=True, eq=False)
class CompositeObjective(Objective):
    terms: tuple[Objective, ...] = ()

    def evaluate(self, params, chain, hessian=False):
        size = params.theta.size
        value, gradient = 0.0, np.zeros(size)
        matrix = np.zeros((size, size)) if hessian else None
        for term in self.terms:
            term_value, term_gradient, term_hessian = term.evaluate(params, chain, hessian)
            value += term_value
            gradient = gradient + term_gradient
            if hessian:
                matrix = matrix + term_hessian
        return value, gradient, matrix
