import math
from pathlib import Path

from safesip.scene import Scene, build_scene, load_scene

SCENES_DIRECTORY = Path(__file__).resolve().parents[2] / "configs" / "scenes"


def _unit_link(translation=None, parent=None, lower=-3.0, upper=3.0, sweep=0.05, length=1.0) -> dict:
    joint = {
        "kind": "hinge",
        "axis": [0.0, 0.0, 1.0],
        "lower": lower,
        "upper": upper,
        "primitives": [
            {"kind": "segment", "vertices": [[0.0, 0.0, 0.0], [length, 0.0, 0.0]], "sweep_radius": sweep}
        ],
    }
    if translation is not None:
        joint["translation"] = translation
    if parent is not None:
        joint["parent"] = parent
    return joint


def planar_reach_scene() -> dict:
    """Create a 2-link planar arm reaching past a disc obstacle."""
    return {
        "name": "planar_reach",
        "chain": {"joints": [_unit_link(), _unit_link(translation=[1.0, 0.0, 0.0])]},
        "obstacles": [
            {"kind": "point", "vertices": [[1.3, 1.0, 0.0]], "sweep_radius": 0.2},
        ],
        "problem": {
            "start": [0.0, 0.0],
            "horizon": 5.0,
            "degree": 5,
            "segments": 5,
            "objective": {
                "targets": [
                    {"link": 1, "point": [1.0, 0.0, 0.0], "position": [0.0, 1.8, 0.0], "weight": 1.0}
                ],
                "smoothness": 1.0e-3,
            },
        },
        "solver": {
            "order": "second",
            "initial_splits": 16,
            "eps_alpha": 0.05,
            "eps_alpha_growth": 2.0,
        },
    }


def dual_arm_scene() -> dict:
    """Create two facing 2-link arms sharing a workspace around a post."""
    return {
        "name": "dual_arm",
        "chain": {
            "joints": [
                _unit_link(parent=-1),
                _unit_link(translation=[1.0, 0.0, 0.0], parent=0),
                {**_unit_link(translation=[4.5, 0.0, 0.0], parent=-1), "rotation": [0.0, 0.0, math.pi]},
                _unit_link(translation=[1.0, 0.0, 0.0], parent=2),
            ]
        },
        "obstacles": [
            {"kind": "point", "vertices": [[2.25, 1.5, 0.0]], "sweep_radius": 0.1},
        ],
        "problem": {
            "start": [0.0, 0.0, 0.0, 0.0],
            "horizon": 5.0,
            "self_collision": True,
            "objective": {
                "targets": [
                    {"link": 1, "point": [1.0, 0.0, 0.0], "position": [1.5, 1.0, 0.0]},
                    {"link": 3, "point": [1.0, 0.0, 0.0], "position": [3.0, 1.0, 0.0]},
                ],
                "smoothness": 1.0e-3,
            },
        },
        "solver": {"order": "second", "initial_splits": 8},
    }


def cage_scene(bars: int = 24, ring_radius: float = 0.2) -> dict:
    """Create a square body translating inside a ring of bars, with its target outside.

    The gaps between the bars are narrower than the body, so only tunneling
    through a bar can reach the target.
    """
    positions = []
    for i in range(bars):
        angle = 2 * math.pi * (i + 0.5) / bars
        positions.append([ring_radius * math.cos(angle), ring_radius * math.sin(angle), 0.0])

    half = 0.02
    return {
        "name": "cage",
        "chain": {
            "joints": [
                {"kind": "prismatic", "axis": [1.0, 0.0, 0.0], "lower": -2.0, "upper": 2.0},
                {
                    "kind": "prismatic",
                    "axis": [0.0, 1.0, 0.0],
                    "lower": -2.0,
                    "upper": 2.0,
                    "primitives": [
                        {
                            "kind": "polytope",
                            "vertices": [
                                [-half, -half, 0.0],
                                [half, -half, 0.0],
                                [half, half, 0.0],
                                [-half, half, 0.0],
                            ],
                            "sweep_radius": 0.005,
                        }
                    ],
                },
            ]
        },
        "obstacles": [
            {"kind": "point", "vertices": [position], "sweep_radius": 0.01} for position in positions
        ],
        "problem": {
            "start": [0.0, 0.0],
            "horizon": 1.0,
            "objective": {
                "targets": [{"link": 1, "position": [1.0, 0.0, 0.0]}],
                "smoothness": 1.0e-3,
            },
            "probe": {"link": 1, "lower": [-0.21, -0.21, -0.1], "upper": [0.21, 0.21, 0.1]},
        },
        "solver": {
            "order": "second",
            "initial_splits": 8,
            "eps_mu": 1.0e-4,
            "eps_alpha": 0.05,
            "eps_alpha_growth": 2.0,
            "exchange_rounds": 60,
        },
    }


def self_collision_scene() -> dict:
    """Create a 3-link arm folding its tip back over its first link."""
    return {
        "name": "self_collision",
        "chain": {
            "joints": [
                _unit_link(),
                _unit_link(translation=[1.0, 0.0, 0.0]),
                _unit_link(translation=[1.0, 0.0, 0.0]),
            ]
        },
        "obstacles": [],
        "problem": {
            "start": [0.0, 0.0, 0.0],
            "horizon": 5.0,
            "self_collision": True,
            "objective": {
                "targets": [{"link": 2, "point": [1.0, 0.0, 0.0], "position": [0.6, 0.5, 0.0]}],
                "smoothness": 1.0e-3,
            },
        },
        "solver": {"order": "second", "initial_splits": 8},
    }


def _box(half_x: float, half_y: float, half_z: float = 0.0, center=(0.0, 0.0, 0.0)) -> list[list[float]]:
    """Corners of an axis-aligned box; a zero half extent gives a flat rectangle."""
    corners = []
    for sz in ((-1.0, 1.0) if half_z > 0 else (0.0,)):
        for sx, sy in ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)):
            corners.append([center[0] + sx * half_x, center[1] + sy * half_y, center[2] + sz * half_z])
    return corners


def _slide(axis, lower: float, upper: float, parent: int, translation=None, primitives=None) -> dict:
    joint = {"kind": "prismatic", "axis": axis, "lower": lower, "upper": upper, "parent": parent}
    if translation is not None:
        joint["translation"] = translation
    if primitives:
        joint["primitives"] = primitives
    return joint


def uav_scene() -> dict:
    """Create a free-flying box that must turn a quarter circle while flying around a pole."""
    joints = [
        _slide([1.0, 0.0, 0.0], -3.0, 3.0, -1),
        _slide([0.0, 1.0, 0.0], -3.0, 3.0, 0),
        _slide([0.0, 0.0, 1.0], -3.0, 3.0, 1),
    ]
    # Yaw, pitch, roll.
    for parent, (axis, limit) in enumerate(
        [([0.0, 0.0, 1.0], 3.1), ([0.0, 1.0, 0.0], 1.5), ([1.0, 0.0, 0.0], 1.5)], start=2
    ):
        joints.append({"kind": "hinge", "axis": axis, "lower": -limit, "upper": limit, "parent": parent})
    joints[-1]["primitives"] = [
        {"kind": "polytope", "vertices": _box(0.15, 0.15, 0.05), "sweep_radius": 0.02}
    ]
    return {
        "name": "uav",
        "chain": {"joints": joints},
        "obstacles": [
            {"kind": "segment", "vertices": [[1.0, 0.05, -1.0], [1.0, 0.05, 1.0]], "sweep_radius": 0.1},
        ],
        "problem": {
            "start": [0.0] * 6,
            "horizon": 5.0,
            "objective": {
                "targets": [
                    {"link": 5, "position": [2.0, 0.0, 0.0]},
                    {"link": 5, "point": [0.15, 0.0, 0.0], "position": [2.0, 0.15, 0.0]},
                ],
                "smoothness": 1.0e-3,
            },
        },
        "solver": {"order": "second", "initial_splits": 8},
    }


def _settling_body(root: int, translation, primitive: dict, lower_y: float) -> list[dict]:
    return [
        _slide([1.0, 0.0, 0.0], -0.3, 0.3, -1, translation=translation),
        _slide([0.0, 1.0, 0.0], lower_y, 0.2, root),
        {
            "kind": "hinge",
            "axis": [0.0, 0.0, 1.0],
            "lower": -3.0,
            "upper": 3.0,
            "parent": root + 1,
            "primitives": [primitive],
        },
    ]


def settling_scene() -> dict:
    """Create two convex bodies dropped into an open box, settling under a height potential."""
    square = {"kind": "polytope", "vertices": _box(0.1, 0.1), "sweep_radius": 0.005}
    triangle = {
        "kind": "polytope",
        "vertices": [[-0.12, -0.07, 0.0], [0.12, -0.07, 0.0], [0.0, 0.14, 0.0]],
        "sweep_radius": 0.005,
    }
    wall = {"kind": "segment", "sweep_radius": 0.02}
    return {
        "name": "settling",
        "chain": {
            "joints": _settling_body(0, [-0.1, 0.4, 0.0], square, -0.6)
            + _settling_body(3, [0.12, 0.75, 0.0], triangle, -1.0)
        },
        "obstacles": [
            {**wall, "vertices": [[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]]},
            {**wall, "vertices": [[-0.5, 0.0, 0.0], [-0.5, 1.0, 0.0]]},
            {**wall, "vertices": [[0.5, 0.0, 0.0], [0.5, 1.0, 0.0]]},
        ],
        "problem": {
            "start": [0.0] * 6,
            "horizon": 1.0,
            "self_collision": True,
            "objective": {
                "potentials": [
                    {"link": 2, "up": [0.0, 1.0, 0.0]},
                    {"link": 5, "up": [0.0, 1.0, 0.0]},
                ],
                "smoothness": 1.0e-3,
            },
        },
        "solver": {"order": "first", "initial_splits": 8},
    }


def mobile_reach_scene() -> dict:
    """Create a cart carrying a 2-link arm that drives up to a shelf and reaches between two boards."""
    cart = {"kind": "polytope", "vertices": _box(0.3, 0.15, center=(0.0, 0.15, 0.0)), "sweep_radius": 0.01}
    board = {"kind": "segment", "sweep_radius": 0.02}
    return {
        "name": "mobile_reach",
        "chain": {
            "joints": [
                _slide([1.0, 0.0, 0.0], -0.5, 2.0, -1, primitives=[cart]),
                _unit_link([0.0, 0.3, 0.0], parent=0, lower=-0.2, upper=2.5, sweep=0.04, length=0.8),
                _unit_link([0.8, 0.0, 0.0], parent=1, lower=-2.5, upper=2.5, sweep=0.03, length=0.6),
            ]
        },
        "obstacles": [
            {**board, "vertices": [[2.0, 0.6, 0.0], [2.8, 0.6, 0.0]]},
            {**board, "vertices": [[2.0, 1.0, 0.0], [2.8, 1.0, 0.0]]},
            {**board, "vertices": [[2.8, 0.0, 0.0], [2.8, 1.4, 0.0]]},
        ],
        "problem": {
            "start": [0.0, 1.2, 0.0],
            "horizon": 5.0,
            "objective": {
                "targets": [{"link": 2, "point": [0.6, 0.0, 0.0], "position": [2.3, 0.8, 0.0]}],
                "smoothness": 1.0e-3,
            },
        },
        "solver": {"order": "second", "initial_splits": 8},
    }


SCENE_BUILDERS = {
    "planar_reach": planar_reach_scene,
    "dual_arm": dual_arm_scene,
    "cage": cage_scene,
    "self_collision": self_collision_scene,
    "uav": uav_scene,
    "settling": settling_scene,
    "mobile_reach": mobile_reach_scene,
}


def bundled_scene(name: str, overrides: dict | None = None) -> Scene:
    """Build a bundled scene by name, preferring its YAML file when the repository is available."""
    if name not in SCENE_BUILDERS:
        raise ValueError(f"Unknown scene {name!r}, must be one of {sorted(SCENE_BUILDERS)}.")
    path = SCENES_DIRECTORY / f"{name}.yaml"
    if path.exists():
        return load_scene(path, overrides)
    return build_scene(SCENE_BUILDERS[name](), overrides)
