"""Tests for interval leaves, the space-time hierarchy, the safety check and energy assembly."""

from dataclasses import replace

import numpy as np
import pytest

from safesip.barrier import BarrierSpec
from safesip.baseline_oracle import verify_feasibility
from safesip.constraints import (
    IntervalLeaf,
    PoseCache,
    Problem,
    STBvh,
    active_terms,
    assemble_energy,
    init_intervals,
    modulate_hessian,
    pair_distance,
    psi,
    reconcile_self_pair,
    resolve_num_threads,
    safety_check,
    subdivide,
)
from safesip.geometry import Obstacle, Primitive, make_pose
from safesip.objectives import CompositeObjective, SmoothnessObjective
from safesip.trajectory import (
    TrajectoryParams,
    constant_params,
    extraction_matrices,
    limit_barrier,
    params_from_control_points,
)

SMOOTH = CompositeObjective((SmoothnessObjective(1.0),))


def _at(problem, x):
    """The slider problem with its obstacle moved to (x, 0, 0)."""
    obstacle = Obstacle(Primitive("point", [[0.0, 0.0, 0.0]]), make_pose(translation=[x, 0.0, 0.0]))
    return replace(problem, obstacles=(obstacle,))


def _noisy_params(start, rng, scale):
    n_free = extraction_matrices(5, 5, 5.0, "C1").n_free
    start = np.asarray(start, dtype=float)
    return TrajectoryParams(start, np.repeat(start, n_free) + rng.uniform(-scale, scale, start.size * n_free))


def _intervals(leaves, pair_id, track=0):
    return [(leaf.t0, leaf.t1) for leaf in leaves if leaf.pair_id == pair_id and leaf.track == track]


def _covers(intervals, horizon):
    intervals = sorted(intervals)
    return (
        intervals[0][0] == 0.0
        and intervals[-1][1] == horizon
        and all(a[1] == b[0] for a, b in zip(intervals[:-1], intervals[1:]))
    )


def test_single_split(slider_problem):
    """One primitive, one obstacle and one split give a single leaf over [0, T]."""
    assert init_intervals(slider_problem, 1) == (IntervalLeaf(0, 0, 0.0, 5.0),)


def test_uniform_partition(slider_problem):
    """Eight splits give eight leaves of length T / 8 covering [0, T]."""
    leaves = init_intervals(slider_problem, 8)
    assert len(leaves) == 8
    assert all(leaf.length == pytest.approx(0.625) for leaf in leaves)
    assert _covers(_intervals(leaves, 0), 5.0)


def test_invalid_split_count(slider_problem):
    with pytest.raises(ValueError, match="initial_splits"):
        init_intervals(slider_problem, 0)


def test_self_pairs_skip_adjacent_links(folding_problem):
    """Only links 0 and 2 of a three-link arm form a self pair unless adjacency is enabled."""
    assert [pair.label for pair in folding_problem.pairs] == ["link0.0~link2.0"]
    leaves = init_intervals(folding_problem, 8)
    assert len(leaves) == 16
    assert _intervals(leaves, 0, 0) == _intervals(leaves, 0, 1)

    everything = replace(folding_problem, include_adjacent=True)
    assert len(everything.pairs) == 3
    assert all(pair.is_self for pair in everything.pairs)


def test_obstacle_pairs_come_first(planar_problem):
    labels = [pair.label for pair in planar_problem.pairs]
    assert labels == ["link0.0~obstacle0", "link1.0~obstacle0"]
    assert planar_problem.pairs[1].lipschitz_sum == pytest.approx(3.0)


def test_subdivide_midpoint(slider_problem):
    """Leaf [0, 1] splits into [0, 0.5] and [0.5, 1]."""
    leaves = init_intervals(replace(slider_problem, horizon=1.0), 1)
    halves = subdivide(leaves, leaves[0])
    assert halves == (IntervalLeaf(0, 0, 0.0, 0.5), IntervalLeaf(0, 0, 0.5, 1.0))


def test_subdivide_leaves_others_untouched(planar_problem):
    """Splitting one leaf keeps every other leaf and the per-pair partition."""
    leaves = init_intervals(planar_problem, 4)
    target = leaves[5]
    split = subdivide(leaves, target)
    assert set(leaves) - {target} <= set(split)
    assert len(split) == len(leaves) + 1
    for pair in planar_problem.pairs:
        assert _covers(_intervals(split, pair.pair_id), 5.0)


def test_repeated_subdivision_is_dyadic(slider_problem):
    """k splits of the same lineage leave an interval of length T / 2^k exactly."""
    leaves = init_intervals(slider_problem, 1)
    leaf = leaves[0]
    for _ in range(10):
        leaves = subdivide(leaves, leaf)
        leaf = leaves[0]
    assert leaf.length == 5.0 / 2**10
    assert _covers(_intervals(leaves, 0), 5.0)


def test_subdivide_unknown_leaf(slider_problem):
    leaves = init_intervals(slider_problem, 2)
    with pytest.raises(ValueError, match="not part of the interval set"):
        subdivide(leaves, IntervalLeaf(0, 0, 0.0, 1.0))


@pytest.mark.parametrize(
    ("coarse", "fine", "expected"),
    [
        ([(0.0, 1.0)], [(0.0, 0.5), (0.5, 1.0)], [(0.0, 0.5), (0.5, 1.0)]),
        ([(0.0, 0.5), (0.5, 1.0)], [(0.0, 0.5), (0.5, 1.0)], [(0.0, 0.5), (0.5, 1.0)]),
        (
            [(0.0, 1.0)],
            [(0.0, 0.25), (0.25, 0.5), (0.5, 1.0)],
            [(0.0, 0.25), (0.25, 0.5), (0.5, 1.0)],
        ),
    ],
)
def test_reconcile_self_pair(coarse, fine, expected):
    """The coarser track is halved until both tracks share boundaries."""
    other = IntervalLeaf(1, 0, 0.0, 1.0)
    leaves = tuple(
        [IntervalLeaf(0, 0, *interval) for interval in coarse]
        + [IntervalLeaf(0, 1, *interval) for interval in fine]
        + [other]
    )
    reconciled = reconcile_self_pair(leaves, 0)
    assert _intervals(reconciled, 0, 0) == expected
    assert _intervals(reconciled, 0, 1) == expected
    assert other in reconciled


def test_reconcile_requires_two_tracks():
    with pytest.raises(ValueError, match="not a self-collision pair"):
        reconcile_self_pair((IntervalLeaf(0, 0, 0.0, 1.0),), 0)


def test_psi_values(spec):
    """psi(0) = 0, and L = 2 over half a second gives about 0.50009."""
    assert psi(0.0, 5.0, spec) == 0.0
    assert psi(0.5, 2.0, spec) == pytest.approx(0.5 + 1e-4 * 0.5 ** (1 / 7))
    assert psi(0.5, 2.0, spec) == pytest.approx(0.50009, abs=1e-5)


def test_safety_check_threshold(slider_problem, spec):
    """A resting point passes iff its obstacle is farther than d0 + psi of each leaf."""
    leaves = init_intervals(slider_problem, 10)
    params = constant_params([0.0])
    bound = spec.d0 + psi(0.5, 1.0, spec)

    assert safety_check(_at(slider_problem, bound + 0.1), leaves, params, spec) is None
    assert safety_check(_at(slider_problem, bound + 1e-9), leaves, params, spec) is None
    assert safety_check(_at(slider_problem, bound - 1e-9), leaves, params, spec) == leaves[0]


def test_safety_check_reports_first_leaf_in_order(slider_problem, spec):
    """Only the interval where the slider sits next to the obstacle fails."""
    points = np.zeros((1, 6))
    points[0, 3:] = 0.9
    params = params_from_control_points(points, degree=5, segments=1, horizon=5.0)
    leaves = init_intervals(slider_problem, 16)
    violating = safety_check(slider_problem, leaves, params, spec)
    assert violating is not None
    assert violating.t0 > 0.0
    assert all(
        leaf >= violating or safety_check(slider_problem, (leaf,), params, spec) is None for leaf in leaves
    )


def test_active_terms_empty_when_far(slider_problem, spec):
    """An obstacle beyond reach of every inflated leaf yields no terms."""
    leaves = init_intervals(slider_problem, 8)
    assert active_terms(_at(slider_problem, 4.0), leaves, constant_params([0.0]), spec) == []


def test_active_terms_include_close_leaf(slider_problem, spec):
    """An obstacle at d0 + x0 / 2 activates every leaf."""
    leaves = init_intervals(slider_problem, 8)
    problem = _at(slider_problem, spec.d0 + spec.x0 / 2)
    assert active_terms(problem, leaves, constant_params([0.0]), spec) == list(leaves)


def test_active_terms_superset_of_brute_force(planar_chain, rng):
    """Pruning never drops a leaf whose midpoint distance is inside the barrier support."""
    spec = BarrierSpec(x0=0.3)
    nontrivial = 0
    for _ in range(30):
        obstacles = [
            Obstacle(Primitive("point", [[0.0, 0.0, 0.0]], 0.05), make_pose(translation=[*rng.uniform(-2, 2, 2), 0.0]))
            for _ in range(3)
        ]
        problem = Problem(planar_chain, obstacles, rng.uniform(-2.0, 2.0, 2), SMOOTH)
        params = _noisy_params(problem.start, rng, 0.5)
        leaves = init_intervals(problem, 8)
        cache = PoseCache(problem.chain, params, (leaf.midpoint for leaf in leaves))

        expected = set()
        for leaf in leaves:
            configuration, poses = cache.at(leaf.midpoint)
            gap, _ = pair_distance(problem, problem.pairs[leaf.pair_id], configuration, poses)
            if gap < spec.d0 + spec.x0:
                expected.add(leaf)
        found = set(active_terms(problem, leaves, params, spec))
        assert expected <= found
        nontrivial += bool(expected)
    assert nontrivial > 0


def test_bvh_query_matches_brute_force(rng):
    """Box queries return exactly the leaves whose boxes overlap."""
    count = 200
    leaves = [IntervalLeaf(i, 0, 0.0, 1.0) for i in range(count)]
    centers = rng.uniform(-5.0, 5.0, (count, 3))
    sizes = rng.uniform(0.01, 0.5, (count, 3))
    lower, upper = centers - sizes, centers + sizes
    bvh = STBvh(leaves, lower, upper)
    for _ in range(50):
        corner = rng.uniform(-5.0, 5.0, 3)
        query_lower, query_upper = corner, corner + rng.uniform(0.1, 2.0, 3)
        overlap = np.all(lower <= query_upper, axis=1) & np.all(upper >= query_lower, axis=1)
        assert bvh.query(query_lower, query_upper) == [leaves[i] for i in np.flatnonzero(overlap)]
    assert STBvh([], np.zeros((0, 3)), np.zeros((0, 3))).query(np.zeros(3), np.ones(3)) == []


def test_bvh_boxes_contain_swept_primitives(planar_problem, rng):
    """Every leaf box contains its primitive at dense instants of the interval."""
    params = _noisy_params([0.3, -0.4], rng, 0.05)
    leaves = init_intervals(planar_problem, 4)
    cache = PoseCache(planar_problem.chain, params, (leaf.midpoint for leaf in leaves))
    bvh = STBvh.from_leaves(planar_problem, leaves, cache)
    for row, leaf in enumerate(bvh.leaves):
        pair = planar_problem.pairs[leaf.pair_id]
        primitive = planar_problem.primitive(pair.link, pair.primitive)
        times = np.linspace(leaf.t0, leaf.t1, 41)
        dense = PoseCache(planar_problem.chain, params, times)
        for t in times:
            vertices = primitive.world_vertices(dense.at(t)[1][pair.link])
            assert np.all(vertices - primitive.sweep_radius >= bvh._lower[row] - 1e-12)
            assert np.all(vertices + primitive.sweep_radius <= bvh._upper[row] + 1e-12)


def test_energy_without_active_terms(slider_problem, spec):
    """No active terms leaves the bare objective."""
    leaves = init_intervals(slider_problem, 8)
    params = constant_params([0.0])
    evaluation = assemble_energy(slider_problem, leaves, params, spec)
    value, gradient, _ = slider_problem.objective.evaluate(params, slider_problem.chain)
    assert evaluation.active_terms == 0
    assert evaluation.value == pytest.approx(value)
    assert value == pytest.approx(4.0)
    np.testing.assert_allclose(evaluation.gradient, gradient)


def test_energy_single_term(slider_problem, spec):
    """A term at distance d0 + x0 / 2 over a 0.1 s interval adds 1e-2 * 0.1 * 2000 = 2."""
    problem = _at(slider_problem, spec.d0 + spec.x0 / 2)
    evaluation = assemble_energy(problem, [IntervalLeaf(0, 0, 0.0, 0.1)], constant_params([0.0]), spec)
    assert evaluation.active_terms == 1
    assert evaluation.value == pytest.approx(4.0 + 2.0, rel=1e-6)


def test_energy_infinite_inside_safety_distance(slider_problem, spec):
    problem = _at(slider_problem, spec.d0 / 2)
    evaluation = assemble_energy(problem, init_intervals(problem, 4), constant_params([0.0]), spec)
    assert not evaluation.finite


def test_energy_gradient_matches_finite_differences(planar_chain, rng):
    """The assembled gradient agrees with central differences of the energy."""
    spec = BarrierSpec(x0=0.2)
    obstacle = Obstacle(Primitive("point", [[0.0, 0.0, 0.0]]), make_pose(translation=[0.5, 0.2, 0.0]))
    problem = Problem(planar_chain, [obstacle], [0.0, 0.0], SMOOTH)
    params = _noisy_params([0.0, 0.0], rng, 0.02)
    leaves = init_intervals(problem, 8)

    evaluation = assemble_energy(problem, leaves, params, spec)
    assert evaluation.finite and evaluation.active_terms > 0

    h = 1e-6
    numeric = np.zeros_like(evaluation.gradient)
    for i in range(params.theta.size):
        step = np.zeros(params.theta.size)
        step[i] = h
        plus = assemble_energy(problem, leaves, params.with_theta(params.theta + step), spec, order="value")
        minus = assemble_energy(problem, leaves, params.with_theta(params.theta - step), spec, order="value")
        numeric[i] = (plus.value - minus.value) / (2 * h)
    assert np.linalg.norm(evaluation.gradient - numeric) / np.linalg.norm(numeric) < 1e-4


def test_second_order_hessian_is_bounded(planar_problem, spec, rng):
    """The second-order Hessian is symmetric with eigenvalues in [beta_min, beta_max]."""
    leaves = init_intervals(planar_problem, 8)
    evaluation = assemble_energy(planar_problem, leaves, _noisy_params([0.0, 0.0], rng, 0.02), spec, "second")
    np.testing.assert_allclose(evaluation.hessian, evaluation.hessian.T)
    eigenvalues = np.linalg.eigvalsh(evaluation.hessian)
    assert eigenvalues.min() >= spec.beta_min * (1 - 1e-6)
    assert eigenvalues.max() <= spec.beta_max * (1 + 1e-6)


def test_modulate_hessian_clamps_eigenvalues(spec):
    """Eigenvalues -1, 0.5 and 1e7 become 1e-6, 0.5 and 1e6."""
    rotation = np.linalg.qr(np.random.default_rng(3).normal(size=(3, 3)))[0]
    hessian = rotation @ np.diag([-1.0, 0.5, 1e7]) @ rotation.T
    modulated = modulate_hessian(hessian, spec)
    np.testing.assert_allclose(np.linalg.eigvalsh(modulated), [1e-6, 0.5, 1e6], rtol=1e-6, atol=1e-9)


def test_energy_is_thread_count_independent(planar_problem, spec, rng):
    """Serial and threaded assembly give bit-identical results."""
    leaves = init_intervals(planar_problem, 16)
    params = _noisy_params([0.0, 0.0], rng, 0.02)
    serial = assemble_energy(planar_problem, leaves, params, spec, "second", num_threads=1)
    threaded = assemble_energy(planar_problem, leaves, params, spec, "second", num_threads=4)
    assert serial.value == threaded.value
    np.testing.assert_array_equal(serial.gradient, threaded.gradient)
    np.testing.assert_array_equal(serial.hessian, threaded.hessian)


def test_resolve_num_threads(monkeypatch):
    """Thread counts come from the argument, then SAFESIP_NUM_THREADS, then default to 1."""
    monkeypatch.delenv("SAFESIP_NUM_THREADS", raising=False)
    assert resolve_num_threads() == 1
    assert resolve_num_threads(3) == 3
    monkeypatch.setenv("SAFESIP_NUM_THREADS", "6")
    assert resolve_num_threads() == 6
    monkeypatch.setenv("SAFESIP_NUM_THREADS", "many")
    with pytest.raises(ValueError, match="SAFESIP_NUM_THREADS"):
        resolve_num_threads()
    with pytest.raises(ValueError, match="at least 1"):
        resolve_num_threads(0)


def test_safe_iterates_pass_dense_audit(planar_problem, spec, rng):
    """Whenever unit-rate trajectories pass the safety check, dense sampling finds no distance at or below d0."""
    leaves = init_intervals(planar_problem, 32)
    checked = 0
    for _ in range(10):
        params = _noisy_params(rng.uniform(-1.0, 1.5, 2), rng, 0.1)
        if not np.isfinite(limit_barrier(params, planar_problem.chain, spec)[0]):
            continue
        if safety_check(planar_problem, leaves, params, spec) is not None:
            continue
        checked += 1
        assert verify_feasibility(planar_problem, params, spec.d0, 1e-3).feasible
    assert checked > 0
