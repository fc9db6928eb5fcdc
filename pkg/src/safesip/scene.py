import logging
import numbers
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from safesip.barrier import BarrierSpec
from safesip.constraints import ContainmentProbe, Problem
from safesip.geometry import Obstacle, Primitive, make_pose
from safesip.kinematics import Joint, KinematicChain
from safesip.objectives import (
    CompositeObjective,
    PotentialObjective,
    SmoothnessObjective,
    TargetObjective,
)
from safesip.solver import SolverConfig

logger = logging.getLogger(__name__)


SCENE_KEYS = frozenset(["name", "chain", "obstacles", "problem", "solver"])
CHAIN_KEYS = frozenset(["joints"])
JOINT_KEYS = frozenset(
    ["kind", "axis", "parent", "translation", "rotation", "lower", "upper", "primitives"]
)
PRIMITIVE_KEYS = frozenset(["kind", "vertices", "sweep_radius"])
OBSTACLE_KEYS = PRIMITIVE_KEYS | {"translation", "rotation"}
PROBLEM_KEYS = frozenset(
    [
        "start",
        "horizon",
        "degree",
        "segments",
        "continuity",
        "self_collision",
        "include_adjacent",
        "limit_barriers",
        "objective",
        "probe",
    ]
)
OBJECTIVE_KEYS = frozenset(["targets", "potentials", "smoothness"])
TARGET_KEYS = frozenset(["link", "point", "position", "weight"])
POTENTIAL_KEYS = frozenset(["link", "point", "up", "weight"])
PROBE_KEYS = frozenset(["link", "point", "lower", "upper"])

BARRIER_FIELDS = frozenset(f.name for f in fields(BarrierSpec))
SOLVER_FIELDS = frozenset(f.name for f in fields(SolverConfig))
RUN_FIELDS = frozenset(["seed", "dt_audit", "exchange_rounds"])
SOLVER_KEYS = BARRIER_FIELDS | SOLVER_FIELDS | RUN_FIELDS
INTEGER_SOLVER_FIELDS = frozenset(
    [
        "initial_splits",
        "max_initial_rounds",
        "max_events",
        "max_inner_iterations",
        "num_threads",
        "seed",
        "exchange_rounds",
    ]
)


class SceneError(ValueError):
    """A scene file does not follow the schema; the message starts with the field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True, eq=False)
class Scene:
    """Everything needed to run one scene: the problem plus solver and audit settings."""

    problem: Problem
    spec: BarrierSpec
    config: SolverConfig
    dt_audit: float = 1e-3
    seed: int = 0
    exchange_rounds: int = 20


def _check_keys(mapping, allowed, path: str, required=()):
    if not isinstance(mapping, dict):
        raise SceneError(path, f"expected a mapping, got {type(mapping).__name__}.")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise SceneError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key.")
    for key in required:
        if key not in mapping:
            raise SceneError(f"{path}.{key}" if path else key, "missing required key.")


def _number(value, path: str) -> float:
    """Accept YAML numbers and numeric strings such as '1e-3'."""
    if isinstance(value, bool):
        raise SceneError(path, f"expected a number, got {value!r}.")
    if isinstance(value, numbers.Real):
        return float(value)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise SceneError(path, f"expected a number, got {value!r}.") from None


def _integer(value, path: str) -> int:
    number = _number(value, path)
    if not number.is_integer():
        raise SceneError(path, f"expected an integer, got {value!r}.")
    return int(number)


def _flag(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise SceneError(path, f"expected true or false, got {value!r}.")
    return value


def _vector(value, path: str, size: int | None = 3) -> np.ndarray:
    if not isinstance(value, (list, tuple)):
        raise SceneError(path, f"expected a list of numbers, got {value!r}.")
    if size is not None and len(value) != size:
        raise SceneError(path, f"expected {size} numbers, got {len(value)}.")
    return np.array([_number(entry, f"{path}[{i}]") for i, entry in enumerate(value)])


def _pose(mapping, path: str) -> np.ndarray:
    rotation = mapping.get("rotation")
    translation = mapping.get("translation")
    matrix = None
    if rotation is not None:
        matrix = Rotation.from_rotvec(_vector(rotation, f"{path}.rotation")).as_matrix()
    if translation is not None:
        translation = _vector(translation, f"{path}.translation")
    return make_pose(matrix, translation)


def _primitive(mapping, path: str, allowed=PRIMITIVE_KEYS) -> Primitive:
    _check_keys(mapping, allowed, path, required=("kind", "vertices"))
    vertices = mapping["vertices"]
    if not isinstance(vertices, list):
        raise SceneError(f"{path}.vertices", "expected a list of 3D points.")
    points = [_vector(vertex, f"{path}.vertices[{i}]") for i, vertex in enumerate(vertices)]
    try:
        return Primitive(
            mapping["kind"],
            np.array(points).reshape(-1, 3),
            _number(mapping.get("sweep_radius", 0.0), f"{path}.sweep_radius"),
        )
    except ValueError as error:
        raise SceneError(path, str(error)) from None


def _chain(mapping, path: str = "chain") -> KinematicChain:
    _check_keys(mapping, CHAIN_KEYS, path, required=("joints",))
    specs = mapping["joints"]
    if not isinstance(specs, list) or not specs:
        raise SceneError(f"{path}.joints", "expected a non-empty list of joints.")

    joints, links, lower, upper = [], [], [], []
    for index, spec in enumerate(specs):
        joint_path = f"{path}.joints[{index}]"
        _check_keys(spec, JOINT_KEYS, joint_path, required=("kind", "axis", "lower", "upper"))
        parent = _integer(spec.get("parent", index - 1), f"{joint_path}.parent")
        try:
            joints.append(
                Joint(spec["kind"], _vector(spec["axis"], f"{joint_path}.axis"), _pose(spec, joint_path), parent)
            )
        except ValueError as error:
            if isinstance(error, SceneError):
                raise
            raise SceneError(joint_path, str(error)) from None

        primitives = spec.get("primitives", [])
        if not isinstance(primitives, list):
            raise SceneError(f"{joint_path}.primitives", "expected a list of primitives.")
        links.append(
            [_primitive(p, f"{joint_path}.primitives[{i}]") for i, p in enumerate(primitives)]
        )
        lower.append(_number(spec["lower"], f"{joint_path}.lower"))
        upper.append(_number(spec["upper"], f"{joint_path}.upper"))

    try:
        return KinematicChain(joints, links, lower, upper)
    except ValueError as error:
        raise SceneError(path, str(error)) from None


def _obstacles(specs, path: str = "obstacles") -> list[Obstacle]:
    if not isinstance(specs, list):
        raise SceneError(path, "expected a list of obstacles.")
    obstacles = []
    for index, spec in enumerate(specs):
        obstacle_path = f"{path}[{index}]"
        primitive = _primitive(spec, obstacle_path, allowed=OBSTACLE_KEYS)
        obstacles.append(Obstacle(primitive, _pose(spec, obstacle_path)))
    return obstacles


def _objective_link(mapping, chain: KinematicChain, path: str) -> tuple[int, float]:
    link = _integer(mapping["link"], f"{path}.link")
    if not (0 <= link < chain.n_joints):
        raise SceneError(f"{path}.link", f"no link {link} in a chain of {chain.n_joints}.")
    weight = _number(mapping.get("weight", 1.0), f"{path}.weight")
    if weight < 0:
        raise SceneError(f"{path}.weight", "must be non-negative.")
    return link, weight


def _objective(mapping, chain: KinematicChain, path: str) -> CompositeObjective:
    _check_keys(mapping, OBJECTIVE_KEYS, path)
    terms = []
    for key in ("targets", "potentials"):
        if not isinstance(mapping.get(key, []), list):
            raise SceneError(f"{path}.{key}", f"expected a list of {key}.")

    for index, target in enumerate(mapping.get("targets", [])):
        target_path = f"{path}.targets[{index}]"
        _check_keys(target, TARGET_KEYS, target_path, required=("link", "position"))
        link, weight = _objective_link(target, chain, target_path)
        terms.append(
            TargetObjective(
                link,
                _vector(target.get("point", [0.0, 0.0, 0.0]), f"{target_path}.point"),
                _vector(target["position"], f"{target_path}.position"),
                weight,
            )
        )
    for index, potential in enumerate(mapping.get("potentials", [])):
        potential_path = f"{path}.potentials[{index}]"
        _check_keys(potential, POTENTIAL_KEYS, potential_path, required=("link", "up"))
        link, weight = _objective_link(potential, chain, potential_path)
        up = _vector(potential["up"], f"{potential_path}.up")
        if not np.any(up):
            raise SceneError(f"{potential_path}.up", "must be nonzero.")
        terms.append(
            PotentialObjective(
                link, _vector(potential.get("point", [0.0, 0.0, 0.0]), f"{potential_path}.point"), up, weight
            )
        )
    smoothness = _number(mapping.get("smoothness", 0.0), f"{path}.smoothness")
    if smoothness < 0:
        raise SceneError(f"{path}.smoothness", "must be non-negative.")
    if smoothness > 0:
        terms.append(SmoothnessObjective(smoothness))
    return CompositeObjective(tuple(terms))


def _probe(mapping, chain: KinematicChain, path: str) -> ContainmentProbe:
    _check_keys(mapping, PROBE_KEYS, path, required=("link", "lower", "upper"))
    link = _integer(mapping["link"], f"{path}.link")
    if not (0 <= link < chain.n_joints):
        raise SceneError(f"{path}.link", f"no link {link} in a chain of {chain.n_joints}.")
    try:
        return ContainmentProbe(
            link,
            _vector(mapping.get("point", [0.0, 0.0, 0.0]), f"{path}.point"),
            _vector(mapping["lower"], f"{path}.lower"),
            _vector(mapping["upper"], f"{path}.upper"),
        )
    except ValueError as error:
        if isinstance(error, SceneError):
            raise
        raise SceneError(path, str(error)) from None


def _problem(mapping, chain: KinematicChain, obstacles, name: str, path: str = "problem") -> Problem:
    _check_keys(mapping, PROBLEM_KEYS, path, required=("start", "objective"))
    start = _vector(mapping["start"], f"{path}.start", size=chain.n_joints)
    options = {}
    for key in ("degree", "segments"):
        if key in mapping:
            options[key] = _integer(mapping[key], f"{path}.{key}")
    if "horizon" in mapping:
        options["horizon"] = _number(mapping["horizon"], f"{path}.horizon")
    if "continuity" in mapping:
        options["continuity"] = str(mapping["continuity"])
    for key in ("self_collision", "include_adjacent", "limit_barriers"):
        if key in mapping:
            options[key] = _flag(mapping[key], f"{path}.{key}")
    if "probe" in mapping:
        options["probe"] = _probe(mapping["probe"], chain, f"{path}.probe")

    objective = _objective(mapping["objective"], chain, f"{path}.objective")
    try:
        problem = Problem(chain, obstacles, start, objective, name=name, **options)
        problem.initial_params()
    except ValueError as error:
        raise SceneError(path, str(error)) from None
    return problem


def _solver_settings(mapping, path: str = "solver") -> tuple[BarrierSpec, SolverConfig, dict]:
    _check_keys(mapping, SOLVER_KEYS, path)
    barrier, solver, run = {}, {}, {}
    for key, value in mapping.items():
        key_path = f"{path}.{key}"
        if key == "order":
            converted = str(value)
        elif key == "num_threads" and value is None:
            converted = None
        elif key in INTEGER_SOLVER_FIELDS:
            converted = _integer(value, key_path)
        else:
            converted = _number(value, key_path)
        target = barrier if key in BARRIER_FIELDS else solver if key in SOLVER_FIELDS else run
        target[key] = converted

    try:
        spec = BarrierSpec(**barrier)
    except ValueError as error:
        raise SceneError(path, str(error)) from None
    try:
        config = SolverConfig(**solver)
    except ValueError as error:
        raise SceneError(path, str(error)) from None
    if run.get("dt_audit", 1.0) <= 0:
        raise SceneError(f"{path}.dt_audit", "must be positive.")
    if run.get("exchange_rounds", 1) < 1:
        raise SceneError(f"{path}.exchange_rounds", "must be at least 1.")
    return spec, config, run


def build_scene(configuration: dict, overrides: dict | None = None) -> Scene:
    """Validate a scene mapping and build its problem and solver settings.

    `overrides` replaces entries of the `solver` section, the way CLI flags do.
    """
    _check_keys(configuration, SCENE_KEYS, "", required=("chain", "problem"))
    solver = dict(configuration.get("solver") or {})
    solver.update({key: value for key, value in (overrides or {}).items() if value is not None})

    chain = _chain(configuration["chain"])
    obstacles = _obstacles(configuration.get("obstacles") or [])
    name = str(configuration.get("name", "scene"))
    problem = _problem(configuration["problem"], chain, obstacles, name)
    spec, config, run = _solver_settings(solver)

    logger.info(
        f"Loaded scene '{name}': {chain.n_joints} joints, {len(obstacles)} obstacles, "
        f"{len(problem.pairs)} collision pairs."
    )
    return Scene(
        problem,
        spec,
        config,
        run.get("dt_audit", 1e-3),
        int(run.get("seed", 0)),
        int(run.get("exchange_rounds", 20)),
    )


def validate_scene_configuration(configuration: dict) -> bool:
    """Raise SceneError with the offending field path if the scene is malformed."""
    build_scene(configuration)
    return True


def read_yaml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "r") as file:
            data = yaml.safe_load(file)
    except yaml.YAMLError as error:
        raise SceneError(str(path), f"invalid YAML ({error}).") from None
    if not isinstance(data, dict):
        raise SceneError(str(path), "expected a mapping at the top level.")
    return data


def load_scene(path, overrides: dict | None = None, solver_path=None) -> Scene:
    """Read a scene file, optionally layering a solver settings file and flag overrides."""
    configuration = read_yaml(path)
    if solver_path is not None:
        solver = read_yaml(solver_path)
        configuration["solver"] = {**(configuration.get("solver") or {}), **solver}
    return build_scene(configuration, overrides)
