"""Tests for the dense audit, the Lipschitz ground truth and the exchange baseline."""

from dataclasses import replace

import numpy as np
import pytest

from safesip.baseline_oracle import (
    FeasibilityReport,
    exchange_solve,
    lipschitz_ground_truth,
    lipschitz_report,
    sample_times,
    sample_violations,
    verify_feasibility,
)
from safesip.examples import SCENE_BUILDERS
from safesip.scene import build_scene
from safesip.solver import solve
from safesip.trajectory import constant_params, evaluate, params_from_control_points


@pytest.fixture
def crossing():
    """The slider moving linearly from 0 to 2 over 5 s, through x = 1 at t = 2.5."""
    return params_from_control_points(np.linspace(0.0, 2.0, 6)[None], degree=5, segments=1, horizon=5.0)


def test_sample_times():
    """Samples step by dt and always end on the horizon."""
    np.testing.assert_allclose(sample_times(1.0, 0.3), [0.0, 0.3, 0.6, 0.9, 1.0])
    times = sample_times(5.0, 1e-3)
    assert len(times) == 5001 and times[-1] == 5.0
    with pytest.raises(ValueError, match="positive"):
        sample_times(1.0, 0.0)


def test_static_clearance(slider_problem, spec):
    """A resting slider is feasible with its static clearance as minimum distance."""
    report = verify_feasibility(slider_problem, constant_params([0.0]), spec.d0, 1e-3)
    assert report.feasible
    assert report.verdict == "feasible"
    assert report.sampled_instants == 5001
    assert report.min_distance == pytest.approx(1.0)
    assert report.to_dict()["violations"] == []


def test_crossing_is_reported(slider_problem, spec, crossing):
    """Passing through the obstacle gives violations clustered at the crossing time."""
    np.testing.assert_allclose(evaluate(crossing, 2.5), [1.0])
    report = verify_feasibility(slider_problem, crossing, spec.d0, 1e-3)
    assert not report.feasible
    assert report.min_distance <= spec.d0
    assert all(abs(violation.t - 2.5) < 0.01 for violation in report.violations)
    record = report.to_dict()
    assert record["verdict"] == "infeasible"
    assert record["violations"][0]["pair"] == "link0.0~obstacle0"


def test_report_verdict_consistency():
    """The verdict follows the violations alone."""
    assert FeasibilityReport(3, 0.5, (), 1e-3).verdict == "feasible"


def test_coarse_samples_miss_the_crossing(slider_problem, spec, crossing):
    """Samples every 0.3 s straddle the crossing while the dense audit catches it."""
    assert sample_violations(slider_problem, crossing, 0.3, spec.d0) == {}
    assert sample_violations(slider_problem, crossing, 1e-3, spec.d0)
    assert not verify_feasibility(slider_problem, crossing, spec.d0, 1e-3).feasible


def test_prismatic_ground_truth(slider_chain):
    """A prismatic joint at unit rate moves its point at unit speed."""
    speed = lipschitz_ground_truth(slider_chain, 0, 0, trials=1, start=[0.0], rates=[1.0])
    assert speed == pytest.approx(1.0)
    with pytest.raises(ValueError, match="trials"):
        lipschitz_ground_truth(slider_chain, 0, 0, trials=0)


def test_lipschitz_report(planar_chain):
    """Bounds dominate the sampled ground truth on every primitive."""
    report = lipschitz_report(planar_chain, trials=50, seed=1)
    assert list(report.columns) == ["bound", "ground_truth", "ratio"]
    assert list(report.index) == [(0, 0), (1, 0)]
    assert (report["ratio"] >= 1.0).all()
    np.testing.assert_allclose(report["bound"], [1.0, 3.0])


def test_exchange_matches_solver_without_obstacles(slider_problem, spec):
    """With nothing to avoid both methods reduce to the same Newton iteration."""
    free = replace(slider_problem, obstacles=())
    ours = solve(free, spec)
    theirs = exchange_solve(free, spec)
    assert theirs.converged and theirs.rounds == 1 and theirs.instants == ()

    objective = free.objective
    value_ours = objective.evaluate(ours.params, free.chain)[0]
    value_theirs = objective.evaluate(theirs.params, free.chain)[0]
    assert value_ours == pytest.approx(value_theirs, abs=1e-6)
    np.testing.assert_allclose(evaluate(theirs.params, 5.0), [2.0], atol=1e-6)


def test_exchange_tunnels_between_coarse_samples(slider_problem, spec):
    """At a 1 s sampling interval the exchange method jumps straight through the obstacle."""
    result = exchange_solve(slider_problem, spec, epsilon=1.0)
    assert result.remaining == {}
    assert (result.log.to_frame()["subdivisions"] == 0).all()
    assert evaluate(result.params, 5.0)[0] > 1.0
    assert not verify_feasibility(slider_problem, result.params, spec.d0, 1e-5).feasible


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(SCENE_BUILDERS))
def test_lipschitz_bound_dominates_sampled_speed_on_bundled_chains(name):
    """Over 1000 random unit-rate trajectories no primitive of a bundled chain outruns its bound."""
    chain = build_scene(SCENE_BUILDERS[name]()).problem.chain
    report = lipschitz_report(chain, trials=1000, seed=0)
    assert len(report) == sum(len(link) for link in chain.links)
    assert (report["ratio"] >= 1.0).all()
