"""Tests for scene loading and validation."""

import numpy as np
import pytest

from safesip.examples import SCENE_BUILDERS, SCENES_DIRECTORY, bundled_scene, planar_reach_scene
from safesip.kinematics import forward_kinematics
from safesip.scene import SceneError, build_scene, load_scene, read_yaml, validate_scene_configuration

SOLVER_CONFIG = SCENES_DIRECTORY.parent / "solver_configs" / "default_solver.yaml"


@pytest.mark.parametrize("name", sorted(SCENE_BUILDERS))
def test_bundled_files_match_builders(name):
    """Each YAML scene describes the same problem as its builder."""
    from_file = load_scene(SCENES_DIRECTORY / f"{name}.yaml")
    built = build_scene(SCENE_BUILDERS[name]())

    assert from_file.problem.name == built.problem.name == name
    assert [pair.label for pair in from_file.problem.pairs] == [pair.label for pair in built.problem.pairs]
    np.testing.assert_allclose(from_file.problem.start, built.problem.start)
    for ours, theirs in zip(from_file.problem.obstacles, built.problem.obstacles):
        np.testing.assert_allclose(ours.pose, theirs.pose, atol=1e-8)
        np.testing.assert_allclose(ours.primitive.vertices, theirs.primitive.vertices, atol=1e-8)
        assert ours.primitive.sweep_radius == theirs.primitive.sweep_radius
    assert from_file.spec == built.spec
    assert from_file.config == built.config


@pytest.mark.parametrize("name", sorted(SCENE_BUILDERS))
def test_builders_validate(name):
    assert validate_scene_configuration(SCENE_BUILDERS[name]())


def test_cage_probe_contains_start():
    """The cage body starts inside the ring of bars."""
    problem = bundled_scene("cage").problem
    assert len(problem.obstacles) == 24
    assert problem.probe.contains(problem.chain, problem.initial_params())


def test_joint_rotation():
    """The second arm of the dual-arm scene faces the first: its link 2 points along -x."""
    chain = bundled_scene("dual_arm").problem.chain
    poses = forward_kinematics(chain, np.zeros(4))
    tip = poses[2, :3, :3] @ [1.0, 0.0, 0.0] + poses[2, :3, 3]
    np.testing.assert_allclose(tip, [3.5, 0.0, 0.0], atol=1e-12)
    assert chain.joints[2].parent == -1


def test_unknown_key():
    configuration = planar_reach_scene()
    configuration["colour"] = "red"
    with pytest.raises(SceneError, match="colour: unknown key"):
        build_scene(configuration)


def test_missing_axis_reports_path():
    """A joint without an axis is reported with its full path."""
    configuration = planar_reach_scene()
    del configuration["chain"]["joints"][1]["axis"]
    with pytest.raises(SceneError, match=r"chain\.joints\[1\]\.axis: missing required key") as error:
        build_scene(configuration)
    assert error.value.path == "chain.joints[1].axis"


def test_bad_vector_length():
    configuration = planar_reach_scene()
    configuration["problem"]["start"] = [0.0]
    with pytest.raises(SceneError, match=r"problem\.start: expected 2 numbers"):
        build_scene(configuration)


def test_numeric_strings_are_accepted():
    """Numbers written as strings, such as '5e-3', are converted."""
    configuration = planar_reach_scene()
    configuration["solver"]["mu"] = "5e-3"
    assert build_scene(configuration).spec.mu == 5e-3

    configuration["solver"]["mu"] = "a lot"
    with pytest.raises(SceneError, match=r"solver\.mu: expected a number"):
        build_scene(configuration)


def test_eta_guard():
    configuration = planar_reach_scene()
    configuration["solver"]["eta"] = 0.2
    with pytest.raises(SceneError, match="eta"):
        build_scene(configuration)


def test_overrides_take_precedence():
    """Overrides replace solver entries; None leaves them alone."""
    scene = build_scene(planar_reach_scene(), {"mu": 0.05, "order": "first", "x0": None, "seed": 4})
    assert scene.spec.mu == 0.05
    assert scene.spec.x0 == 1e-3
    assert scene.config.order == "first"
    assert scene.seed == 4


def test_run_settings():
    configuration = planar_reach_scene()
    configuration["solver"].update(dt_audit=1e-4, seed=9, exchange_rounds=5)
    scene = build_scene(configuration)
    assert (scene.dt_audit, scene.seed, scene.exchange_rounds) == (1e-4, 9, 5)

    configuration["solver"]["dt_audit"] = 0.0
    with pytest.raises(SceneError, match=r"solver\.dt_audit"):
        build_scene(configuration)

    configuration["solver"].update(dt_audit=1e-3, exchange_rounds=0)
    with pytest.raises(SceneError, match=r"solver\.exchange_rounds"):
        build_scene(configuration)


def test_solver_config_file_is_layered():
    """A solver settings file is layered over the scene, and flags over both."""
    scene = load_scene(SCENES_DIRECTORY / "planar_reach.yaml", solver_path=SOLVER_CONFIG)
    assert scene.spec.eta == pytest.approx(1 / 7)
    assert scene.config.max_events == 10**6
    assert scene.dt_audit == 1e-3

    scene = load_scene(SCENES_DIRECTORY / "planar_reach.yaml", {"d0": 0.01}, SOLVER_CONFIG)
    assert scene.spec.d0 == 0.01


def test_read_yaml_errors(tmp_path):
    broken = tmp_path / "broken.yaml"
    broken.write_text("chain: [1, 2\n")
    with pytest.raises(SceneError, match="invalid YAML"):
        read_yaml(broken)

    listing = tmp_path / "listing.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(SceneError, match="mapping at the top level"):
        read_yaml(listing)


def test_unknown_bundled_scene():
    with pytest.raises(ValueError, match="Unknown scene"):
        bundled_scene("maze")


def test_uav_is_free_flying():
    """The UAV body hangs off three slides followed by three hinges."""
    chain = bundled_scene("uav").problem.chain
    assert [joint.kind for joint in chain.joints] == ["prismatic"] * 3 + ["hinge"] * 3
    assert chain.root_path(5) == [0, 1, 2, 3, 4, 5]
    assert [len(link) for link in chain.links] == [0, 0, 0, 0, 0, 1]


def test_settling_bodies_collide_with_each_other():
    """The two settling bodies are separate roots whose primitives form a self-collision pair."""
    problem = bundled_scene("settling").problem
    assert [joint.parent for joint in problem.chain.joints] == [-1, 0, 1, -1, 3, 4]
    labels = [pair.label for pair in problem.pairs]
    assert "link2.0~link5.0" in labels
    assert sum(label.endswith(("obstacle0", "obstacle1", "obstacle2")) for label in labels) == 6
    assert all(type(term).__name__ != "TargetObjective" for term in problem.objective.terms)


def test_potential_needs_direction():
    configuration = SCENE_BUILDERS["settling"]()
    configuration["problem"]["objective"]["potentials"][1]["up"] = [0.0, 0.0, 0.0]
    with pytest.raises(SceneError, match=r"problem\.objective\.potentials\[1\]\.up"):
        build_scene(configuration)
