"""Convex primitives and their pairwise distance with closest-point witnesses.

Shapes are points, segments and convex polytopes (the convex hull of their
vertices), each optionally swept by a ball. Distances are computed between the
hull cores and corrected by the sweep radii, so the witnesses always lie on the
cores.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

logger = logging.getLogger(__name__)


PRIMITIVE_KINDS = frozenset(["point", "segment", "polytope"])

# Sweep applied to segments and polytope faces used inside the solver.
DEFAULT_SWEEP_RADIUS = 1e-4

GJK_MAX_ITERATIONS = 64
GJK_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class Primitive:
    """A convex shape in its local frame.

    The effective shape is the Minkowski sum of the convex hull of
    `vertices` and a ball of radius `sweep_radius`.
    """

    kind: str
    vertices: np.ndarray
    sweep_radius: float = 0.0

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float)
        if vertices.size == 0:
            raise ValueError(f"A {self.kind} primitive needs at least one vertex.")
        vertices = vertices.reshape(-1, 3)
        vertices.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "sweep_radius", float(self.sweep_radius))

        if self.kind not in PRIMITIVE_KINDS:
            raise ValueError(
                f"Unsupported kind {self.kind!r}, must be one of {PRIMITIVE_KINDS}."
            )
        if self.sweep_radius < 0:
            raise ValueError(f"'sweep_radius' must be >= 0, got {self.sweep_radius}.")

        count = len(vertices)
        if self.kind == "point" and count != 1:
            raise ValueError(f"A point has exactly 1 vertex, got {count}.")
        if self.kind == "segment":
            if count != 2:
                raise ValueError(f"A segment has exactly 2 vertices, got {count}.")
            if np.allclose(vertices[0], vertices[1], rtol=0.0, atol=1e-12):
                raise ValueError("Segment endpoints must be distinct.")
        if self.kind == "polytope" and count < 3:
            raise ValueError(f"A polytope needs at least 3 vertices, got {count}.")

    @property
    def radius(self) -> float:
        """Largest distance from the local origin to the swept shape."""
        return float(np.linalg.norm(self.vertices, axis=1).max()) + self.sweep_radius

    def world_vertices(self, pose: np.ndarray) -> np.ndarray:
        return transform_points(pose, self.vertices)


@dataclass(frozen=True, eq=False)
class Obstacle:
    """A static primitive placed in the world."""

    primitive: Primitive
    pose: np.ndarray

    def __post_init__(self):
        pose = np.array(self.pose, dtype=float)
        if pose.shape != (4, 4):
            raise ValueError(f"An obstacle pose must be a 4x4 transform, got shape {pose.shape}.")
        pose.setflags(write=False)
        object.__setattr__(self, "pose", pose)


@dataclass(frozen=True)
class DistanceResult:
    """Signed, sweep-adjusted distance and its derivatives.

    `grad_vertices_a[m]` is the derivative of the distance with respect to the
    world position of vertex m of the first shape.
    """

    distance: float
    witness_a: np.ndarray
    witness_b: np.ndarray
    grad_vertices_a: np.ndarray
    grad_vertices_b: np.ndarray


def make_pose(rotation: np.ndarray | None = None, translation=None) -> np.ndarray:
    """Homogeneous 4x4 rigid transform."""
    pose = np.eye(4)
    if rotation is not None:
        pose[:3, :3] = rotation
    if translation is not None:
        pose[:3, 3] = translation
    return pose


def transform_points(pose: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ pose[:3, :3].T + pose[:3, 3]


def _support_index(vertices: np.ndarray, direction: np.ndarray) -> int:
    """Index of the vertex maximizing the dot product, lexicographically smallest on ties."""
    dots = vertices @ direction
    best = dots.max()
    ties = np.flatnonzero(dots >= best - 1e-12 * max(1.0, abs(best)))
    if len(ties) == 1:
        return int(ties[0])
    candidates = vertices[ties]
    order = np.lexsort(candidates.T[::-1])
    return int(ties[order[0]])


def support(p: Primitive, pose: np.ndarray, direction) -> np.ndarray:
    """Point of the swept shape that is farthest along `direction`."""
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise ValueError("The support direction must be nonzero.")
    unit = direction / norm
    vertices = p.world_vertices(pose)
    return vertices[_support_index(vertices, unit)] + p.sweep_radius * unit


def distance(
    a: Primitive, pose_a: np.ndarray, b: Primitive, pose_b: np.ndarray
) -> DistanceResult:
    """Distance between two swept convex shapes, negative when they overlap."""
    vertices_a = a.world_vertices(pose_a)
    vertices_b = b.world_vertices(pose_b)

    if len(vertices_a) <= 2 and len(vertices_b) <= 2:
        weights_a, weights_b = _closest_segment_segment(vertices_a, vertices_b)
    else:
        weights_a, weights_b = _gjk(vertices_a, vertices_b)

    witness_a = weights_a @ vertices_a
    witness_b = weights_b @ vertices_b
    offset = witness_a - witness_b
    core = float(np.linalg.norm(offset))

    if core > 0:
        normal = offset / core
        grad_a = np.outer(weights_a, normal)
        grad_b = -np.outer(weights_b, normal)
    else:
        grad_a = np.zeros_like(vertices_a)
        grad_b = np.zeros_like(vertices_b)

    return DistanceResult(
        distance=core - a.sweep_radius - b.sweep_radius,
        witness_a=witness_a,
        witness_b=witness_b,
        grad_vertices_a=grad_a,
        grad_vertices_b=grad_b,
    )


def _parallel_segment_params(
    p1: np.ndarray, d1: np.ndarray, p2: np.ndarray, d2: np.ndarray
) -> tuple[float, float]:
    """Closest parameters of two parallel segments.

    Every endpoint projected onto the other segment is a candidate; among the
    closest candidates the lexicographically smallest (witness_a, witness_b)
    pair wins, so the result does not depend on vertex order.
    """
    a, e, b = d1 @ d1, d2 @ d2, d1 @ d2
    r = p1 - p2
    c, f = d1 @ r, d2 @ r
    candidates = []
    for s in (0.0, 1.0):
        candidates.append((s, float(np.clip((b * s + f) / e, 0.0, 1.0))))
    for t in (0.0, 1.0):
        candidates.append((float(np.clip((b * t - c) / a, 0.0, 1.0)), t))

    points = [(p1 + s * d1, p2 + t * d2) for s, t in candidates]
    gaps = np.array([np.linalg.norm(x - y) for x, y in points])
    tolerance = 1e-12 * max(1.0, float(gaps.max()))
    tied = np.flatnonzero(gaps <= gaps.min() + tolerance)
    best = min(tied, key=lambda i: tuple(np.concatenate(points[i])))
    return candidates[best]


def _closest_segment_segment(
    vertices_a: np.ndarray, vertices_b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Closest points of two segments (a point is a degenerate segment).

    Returns barycentric weights over the given vertices. Parallel segments
    resolve to the lexicographically smallest closest witness pair.
    """
    p1, q1 = vertices_a[0], vertices_a[-1]
    p2, q2 = vertices_b[0], vertices_b[-1]
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    tiny = 1e-300

    if a <= tiny and e <= tiny:
        s = t = 0.0
    elif a <= tiny:
        s = 0.0
        t = float(np.clip(f / e, 0.0, 1.0))
    else:
        c = d1 @ r
        if e <= tiny:
            t = 0.0
            s = float(np.clip(-c / a, 0.0, 1.0))
        else:
            b = d1 @ d2
            denom = a * e - b * b
            if denom <= 1e-14 * a * e:
                s, t = _parallel_segment_params(p1, d1, p2, d2)
            else:
                s = float(np.clip((b * f - c * e) / denom, 0.0, 1.0))
                t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = float(np.clip(-c / a, 0.0, 1.0))
            elif t > 1.0:
                t = 1.0
                s = float(np.clip((b - c) / a, 0.0, 1.0))

    weights_a = np.array([1.0]) if len(vertices_a) == 1 else np.array([1.0 - s, s])
    weights_b = np.array([1.0]) if len(vertices_b) == 1 else np.array([1.0 - t, t])
    return weights_a, weights_b


@lru_cache(maxsize=None)
def _subsets(count: int) -> tuple[tuple[int, ...], ...]:
    """Non-empty index subsets, smallest first."""
    masks = sorted(range(1, 1 << count), key=lambda m: (bin(m).count("1"), m))
    return tuple(tuple(i for i in range(count) if m >> i & 1) for m in masks)


def _closest_on_simplex(points: np.ndarray) -> np.ndarray:
    """Barycentric weights of the point of conv(points) nearest the origin.

    Every face is projected and the nearest projection with non-negative
    weights wins; a simplex has at most four points so this is cheap.
    """
    best_weights = None
    best_sq = np.inf
    for subset in _subsets(len(points)):
        sub = points[list(subset)]
        if len(subset) == 1:
            local = np.array([1.0])
        else:
            edges = (sub[1:] - sub[0]).T
            coeffs = np.linalg.lstsq(edges, -sub[0], rcond=None)[0]
            local = np.concatenate([[1.0 - coeffs.sum()], coeffs])
            if local.min() < -1e-12:
                continue
            local = np.clip(local, 0.0, None)
            local /= local.sum()
        closest = local @ sub
        sq = closest @ closest
        if sq < best_sq * (1 - 1e-12):
            best_sq = sq
            best_weights = np.zeros(len(points))
            best_weights[list(subset)] = local
    return best_weights


def _gjk(vertices_a: np.ndarray, vertices_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Support-function descent on the Minkowski difference of two vertex sets.

    Returns barycentric weights over the vertices of each shape realizing the
    closest pair of the two hulls.
    """
    direction = vertices_b.mean(axis=0) - vertices_a.mean(axis=0)
    if not direction.any():
        direction = np.array([1.0, 0.0, 0.0])
    simplex = [(_support_index(vertices_a, direction), _support_index(vertices_b, -direction))]
    weights = np.array([1.0])
    closest = vertices_a[simplex[0][0]] - vertices_b[simplex[0][1]]

    for _ in range(GJK_MAX_ITERATIONS):
        closest_sq = closest @ closest
        if closest_sq <= 1e-24:
            break
        new = (_support_index(vertices_a, -closest), _support_index(vertices_b, closest))
        point = vertices_a[new[0]] - vertices_b[new[1]]
        # Gap between the current distance and the lower bound from the support plane.
        if closest_sq - closest @ point <= GJK_TOLERANCE * np.sqrt(closest_sq) or new in simplex:
            break

        candidate = simplex + [new]
        points = np.array([vertices_a[i] - vertices_b[j] for i, j in candidate])
        candidate_weights = _closest_on_simplex(points)
        candidate_closest = candidate_weights @ points
        if candidate_closest @ candidate_closest >= closest_sq:
            break

        keep = candidate_weights > 0
        simplex = [pair for pair, kept in zip(candidate, keep) if kept]
        weights = candidate_weights[keep]
        closest = candidate_closest
        if len(simplex) == 4:
            break

    weights_a = np.zeros(len(vertices_a))
    weights_b = np.zeros(len(vertices_b))
    for weight, (i, j) in zip(weights, simplex):
        weights_a[i] += weight
        weights_b[j] += weight
    return weights_a, weights_b


def _batch_segment_distance(
    p1: np.ndarray, q1: np.ndarray, p2: np.ndarray, q2: np.ndarray
) -> np.ndarray:
    """Vectorized closest distance between segment batches of shape (m, 3)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    b = np.einsum("ij,ij->i", d1, d2)
    c = np.einsum("ij,ij->i", d1, r)
    f = np.einsum("ij,ij->i", d2, r)

    safe_a = np.where(a > 1e-300, a, 1.0)
    safe_e = np.where(e > 1e-300, e, 1.0)
    denom = a * e - b * b
    general = denom > 1e-14 * a * e
    s = np.where(general, np.clip((b * f - c * e) / np.where(general, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e

    low, high = t < 0.0, t > 1.0
    s = np.where(low, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(high, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    # Degenerate segments collapse to points.
    s = np.where(a <= 1e-300, 0.0, s)
    t = np.where(a <= 1e-300, np.clip(f / safe_e, 0.0, 1.0), t)
    s = np.where(e <= 1e-300, np.clip(-c / safe_a, 0.0, 1.0), s)
    t = np.where(e <= 1e-300, 0.0, t)
    s = np.where((a <= 1e-300) & (e <= 1e-300), 0.0, s)

    offset = (p1 + s[:, None] * d1) - (p2 + t[:, None] * d2)
    return np.linalg.norm(offset, axis=1)


def batch_distance(
    a: Primitive, poses_a: np.ndarray, b: Primitive, poses_b: np.ndarray
) -> np.ndarray:
    """Distances for a batch of pose pairs, shape (m,).

    Either pose argument may be a single 4x4 transform, which is broadcast.
    Points and segments are handled in one vectorized pass; anything else
    falls back to `distance` per pose pair.
    """
    poses_a = np.asarray(poses_a, dtype=float)
    poses_b = np.asarray(poses_b, dtype=float)
    count = max(len(poses_a) if poses_a.ndim == 3 else 1, len(poses_b) if poses_b.ndim == 3 else 1)
    poses_a = np.broadcast_to(poses_a, (count, 4, 4))
    poses_b = np.broadcast_to(poses_b, (count, 4, 4))

    if len(a.vertices) > 2 or len(b.vertices) > 2:
        return np.array(
            [distance(a, pa, b, pb).distance for pa, pb in zip(poses_a, poses_b)]
        )

    def world(primitive, poses, index):
        vertex = primitive.vertices[min(index, len(primitive.vertices) - 1)]
        return np.einsum("mij,j->mi", poses[:, :3, :3], vertex) + poses[:, :3, 3]

    core = _batch_segment_distance(
        world(a, poses_a, 0), world(a, poses_a, 1), world(b, poses_b, 0), world(b, poses_b, 1)
    )
    return core - a.sweep_radius - b.sweep_radius
