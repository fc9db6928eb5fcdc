import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from safesip.geometry import Primitive

logger = logging.getLogger(__name__)


JOINT_KINDS = frozenset(["hinge", "prismatic"])


@dataclass(frozen=True, eq=False)
class Joint:
    """A single degree of freedom.

    `parent_offset` places the joint frame in the frame of its parent link;
    the joint then rotates about (hinge) or slides along (prismatic) `axis`.
    A `parent` of -1 marks a root joint.
    """

    kind: str
    axis: np.ndarray
    parent_offset: np.ndarray = field(default_factory=lambda: np.eye(4))
    parent: int = -1

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise ValueError(f"Unsupported joint kind {self.kind!r}, must be one of {JOINT_KINDS}.")
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise ValueError("A joint axis must be nonzero.")
        object.__setattr__(self, "axis", axis / norm)
        object.__setattr__(self, "parent_offset", np.asarray(self.parent_offset, dtype=float))


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """An open-loop articulated robot: one link per joint, links carry primitives."""

    joints: tuple[Joint, ...]
    links: tuple[tuple[Primitive, ...], ...]
    joint_lower: np.ndarray
    joint_upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "links", tuple(tuple(link) for link in self.links))
        object.__setattr__(self, "joint_lower", np.asarray(self.joint_lower, dtype=float))
        object.__setattr__(self, "joint_upper", np.asarray(self.joint_upper, dtype=float))

        count = len(self.joints)
        if count == 0:
            raise ValueError("A kinematic chain needs at least one joint.")
        if len(self.links) != count:
            raise ValueError(f"Expected {count} links (one per joint), got {len(self.links)}.")
        if self.joint_lower.shape != (count,) or self.joint_upper.shape != (count,):
            raise ValueError(f"Joint limits must have shape ({count},).")
        if not np.all(self.joint_lower < self.joint_upper):
            raise ValueError("Joint limits must satisfy joint_lower < joint_upper elementwise.")
        for index, joint in enumerate(self.joints):
            if not (-1 <= joint.parent < index):
                raise ValueError(
                    f"Joint {index} has parent {joint.parent}; parents must precede their children."
                )

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def link_lengths(self) -> np.ndarray:
        """Largest distance from each joint origin to its attached swept primitives."""
        return np.array(
            [max((p.radius for p in link), default=0.0) for link in self.links]
        )

    def root_path(self, link: int) -> list[int]:
        """Joints from the root down to `link`, inclusive."""
        if not (0 <= link < self.n_joints):
            raise ValueError(f"Invalid link index {link}, chain has {self.n_joints} links.")
        path = []
        while link >= 0:
            path.append(link)
            link = self.joints[link].parent
        return path[::-1]

    def adjacent(self, link_a: int, link_b: int) -> bool:
        """Whether two links share a joint (one is the parent of the other)."""
        return self.joints[link_a].parent == link_b or self.joints[link_b].parent == link_a


def _joint_motion(joint: Joint, values: np.ndarray) -> np.ndarray:
    """Batch of 4x4 motions of one joint for an array of joint values."""
    motion = np.broadcast_to(np.eye(4), values.shape + (4, 4)).copy()
    if joint.kind == "hinge":
        rotvecs = values[..., None] * joint.axis
        motion[..., :3, :3] = Rotation.from_rotvec(rotvecs.reshape(-1, 3)).as_matrix().reshape(
            values.shape + (3, 3)
        )
    else:
        motion[..., :3, 3] = values[..., None] * joint.axis
    return motion


def forward_kinematics(chain: KinematicChain, configuration) -> np.ndarray:
    """World pose of every link.

    `configuration` is a joint vector of shape (n,) or a batch of shape (m, n);
    the result has shape (n, 4, 4) or (m, n, 4, 4).
    """
    configuration = np.asarray(configuration, dtype=float)
    if configuration.shape[-1:] != (chain.n_joints,):
        raise ValueError(
            f"Configuration has {configuration.shape[-1:]} entries, chain has {chain.n_joints} joints."
        )

    batch_shape = configuration.shape[:-1]
    poses = np.empty(batch_shape + (chain.n_joints, 4, 4))
    for index, joint in enumerate(chain.joints):
        motion = _joint_motion(joint, configuration[..., index])
        local = joint.parent_offset @ motion
        if joint.parent < 0:
            poses[..., index, :, :] = local
        else:
            poses[..., index, :, :] = poses[..., joint.parent, :, :] @ local
    return poses


def point_jacobian(
    chain: KinematicChain,
    configuration,
    link: int,
    local_point,
    poses: np.ndarray | None = None,
) -> np.ndarray:
    """World velocity of a link-fixed point per unit joint rate, shape (3, n).

    Pass precomputed `poses` from `forward_kinematics` to avoid recomputing them.
    """
    path = chain.root_path(link)
    if poses is None:
        poses = forward_kinematics(chain, configuration)

    point = poses[link, :3, :3] @ np.asarray(local_point, dtype=float) + poses[link, :3, 3]
    jacobian = np.zeros((3, chain.n_joints))
    for index in path:
        joint = chain.joints[index]
        axis = poses[index, :3, :3] @ joint.axis
        if joint.kind == "hinge":
            jacobian[:, index] = np.cross(axis, point - poses[index, :3, 3])
        else:
            jacobian[:, index] = axis
    return jacobian


def _vertex_reach(chain: KinematicChain, path: list[int], vertex: np.ndarray) -> np.ndarray:
    """Straightened distance from every joint on `path` to a vertex of the last link."""
    # Length of each hop from a path joint to the next one, prismatic travel included.
    hops = []
    for child in path[1:]:
        parent = chain.joints[child].parent
        hop = np.linalg.norm(chain.joints[child].parent_offset[:3, 3])
        if chain.joints[parent].kind == "prismatic":
            hop += max(abs(chain.joint_lower[parent]), abs(chain.joint_upper[parent]))
        hops.append(hop)
    # The vertex rides on the last joint, so its own prismatic travel counts too.
    last = path[-1]
    hop = np.linalg.norm(vertex)
    if chain.joints[last].kind == "prismatic":
        hop += max(abs(chain.joint_lower[last]), abs(chain.joint_upper[last]))
    hops.append(hop)
    # Reach from joint k sums all hops from k to the vertex.
    return np.cumsum(hops[::-1])[::-1]


def lipschitz_bound(chain: KinematicChain, link: int, primitive: int) -> float:
    """Upper bound on the rate of change of any distance to a moving primitive.

    Assumes every joint rate lies in [-1, 1]. It bounds the l2,1 norm of the
    point Jacobian: hinges contribute their straightened lever arm, prismatic
    joints their unit axis. A convex hull takes the maximum over its vertices.
    """
    path = chain.root_path(link)
    if not (0 <= primitive < len(chain.links[link])):
        raise ValueError(f"Link {link} has no primitive {primitive}.")

    is_hinge = np.array([chain.joints[k].kind == "hinge" for k in path])
    bound = 0.0
    for vertex in chain.links[link][primitive].vertices:
        reach = _vertex_reach(chain, path, vertex)
        bound = max(bound, float(np.sum(np.where(is_hinge, reach, 1.0))))
    return bound


def lipschitz_table(chain: KinematicChain) -> pd.Series:
    """Lipschitz bound of every primitive, indexed by (link, primitive)."""
    index = pd.MultiIndex.from_tuples(
        [(i, j) for i, link in enumerate(chain.links) for j in range(len(link))],
        names=["link", "primitive"],
    )
    values = [lipschitz_bound(chain, i, j) for i, j in index]
    return pd.Series(values, index=index, name="L1", dtype=float)
