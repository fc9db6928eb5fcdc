import numpy as np
import pytest

from safesip.barrier import BarrierSpec
from safesip.constraints import Problem
from safesip.geometry import Obstacle, Primitive, make_pose
from safesip.kinematics import Joint, KinematicChain
from safesip.objectives import CompositeObjective, SmoothnessObjective, TargetObjective


def unit_segment(sweep_radius=0.05):
    return Primitive("segment", [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], sweep_radius)


def point_obstacle(position, sweep_radius=0.0):
    return Obstacle(Primitive("point", [[0.0, 0.0, 0.0]], sweep_radius), make_pose(translation=position))


@pytest.fixture
def planar_chain():
    """Two unit links hinged about z, the second attached at the tip of the first."""
    joints = [
        Joint("hinge", [0.0, 0.0, 1.0]),
        Joint("hinge", [0.0, 0.0, 1.0], make_pose(translation=[1.0, 0.0, 0.0]), parent=0),
    ]
    return KinematicChain(joints, [[unit_segment()], [unit_segment()]], [-3.0, -3.0], [3.0, 3.0])


@pytest.fixture
def slider_chain():
    """A single point sliding along x between -5 and 5."""
    return KinematicChain(
        [Joint("prismatic", [1.0, 0.0, 0.0])],
        [[Primitive("point", [[0.0, 0.0, 0.0]])]],
        [-5.0],
        [5.0],
    )


@pytest.fixture
def slider_target():
    return CompositeObjective((TargetObjective(0, np.zeros(3), [2.0, 0.0, 0.0]),))


@pytest.fixture
def slider_problem(slider_chain, slider_target):
    """Slider heading for x = 2 with a point obstacle at x = 1 in the way."""
    return Problem(
        slider_chain,
        [point_obstacle([1.0, 0.0, 0.0])],
        [0.0],
        slider_target,
        limit_barriers=False,
        name="slider",
    )


@pytest.fixture
def planar_problem(planar_chain):
    """Planar reach around a disc, as in the bundled scene."""
    objective = CompositeObjective(
        (
            TargetObjective(1, [1.0, 0.0, 0.0], [0.0, 1.8, 0.0]),
            SmoothnessObjective(1e-3),
        )
    )
    return Problem(
        planar_chain,
        [point_obstacle([1.3, 1.0, 0.0], 0.2)],
        [0.0, 0.0],
        objective,
        name="planar",
    )


@pytest.fixture
def folding_problem():
    """Three-link arm with its only non-adjacent self-collision pair enabled."""
    joints = [
        Joint("hinge", [0.0, 0.0, 1.0]),
        Joint("hinge", [0.0, 0.0, 1.0], make_pose(translation=[1.0, 0.0, 0.0]), parent=0),
        Joint("hinge", [0.0, 0.0, 1.0], make_pose(translation=[1.0, 0.0, 0.0]), parent=1),
    ]
    chain = KinematicChain(joints, [[unit_segment()]] * 3, [-3.0] * 3, [3.0] * 3)
    objective = CompositeObjective((TargetObjective(2, [1.0, 0.0, 0.0], [0.6, 0.5, 0.0]),))
    return Problem(chain, [], [0.0, 0.0, 0.0], objective, self_collision=True, name="folding")


@pytest.fixture
def spec():
    return BarrierSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(7)
