"""Joint inference over synchronized local grids, several targets."""

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import norm

import topsel as ts
from topsel.errors import CapacityError, ParameterError


@pytest.fixture()
def setup():
    rng = np.random.default_rng(7)
    area = ts.Rect(0.0, 0.0, 24.0, 24.0)
    dmap = ts.DeploymentMap(
        tuple(ts.Location(*rng.uniform(0.0, 24.0, 2)) for _ in range(8)), area
    )
    grid = ts.grid_covering(area, 9, 9)
    model = ts.PropagationModel(
        tuple(
            ts.LogLinearModel(-38.0 - 0.5 * i, 2.1 + 0.05 * i, 1.0 + 0.1 * i)
            for i in range(dmap.s)
        )
    )
    return model, dmap, grid


# ---------------------------------------------------------------------------
# local grids and the schedule
# ---------------------------------------------------------------------------


def test_local_grid_interior_block(setup):
    _, _, grid = setup
    c = 4 * grid.cols + 4  # center cell of the 9x9 grid
    idx = ts.local_grid(grid, c, 3)
    rows, cols = np.divmod(idx, grid.cols)
    assert idx.shape == (9,)
    assert sorted(idx.tolist()) == idx.tolist()  # row-major ascending
    assert set(rows) == {3, 4, 5} and set(cols) == {3, 4, 5}


def test_local_grid_clips_at_borders(setup):
    _, _, grid = setup
    assert ts.local_grid(grid, 0, 3).shape == (4,)  # corner
    assert ts.local_grid(grid, 4, 3).shape == (6,)  # top edge
    assert ts.local_grid(grid, 0, 1).tolist() == [0]
    full = ts.local_grid(grid, 4 * grid.cols + 4, 99)
    assert full.shape == (grid.n,)


def test_local_grid_location_center_snaps(setup):
    _, _, grid = setup
    loc = grid.point(31)
    near = ts.Location(loc.x + 0.3 * grid.spacing, loc.y - 0.2 * grid.spacing)
    assert ts.local_grid(grid, near, 3).tolist() == ts.local_grid(grid, 31, 3).tolist()


def test_local_grid_validation(setup):
    _, _, grid = setup
    with pytest.raises(ParameterError):
        ts.local_grid(grid, 0, 2)
    with pytest.raises(ParameterError):
        ts.local_grid(grid, 0, -1)
    with pytest.raises(ParameterError):
        ts.local_grid(grid, grid.n, 3)


def test_schedule_side_at():
    sched = ts.GridSchedule(t_sync=8, t_inc=2, side_schedule=(3, 5, 9))
    assert [sched.side_at(q) for q in range(7)] == [3, 3, 5, 5, 9, 9, 9]
    assert sched.side_at(100) == 9  # clamps at the last entry
    with pytest.raises(ParameterError):
        sched.side_at(-1)


def test_schedule_validation():
    with pytest.raises(ParameterError):
        ts.GridSchedule(t_sync=0)
    with pytest.raises(ParameterError):
        ts.GridSchedule(t_sync=4, t_inc=0)
    with pytest.raises(ParameterError):
        ts.GridSchedule(t_sync=4, side_schedule=(3, 4))
    with pytest.raises(ParameterError):
        ts.GridSchedule(t_sync=4, side_schedule=(5, 3))
    with pytest.raises(ParameterError):
        ts.GridSchedule(t_sync=4, side_schedule=())


# ---------------------------------------------------------------------------
# joint posterior
# ---------------------------------------------------------------------------


def brute_force_joint(model, dmap, grid, blocks, z):
    """Exhaustive enumeration oracle: per-sensor mean powers add linearly,
    the noise variance follows the most powerful target (ties to the lower
    target index), readings are independent Gaussians."""
    pts = grid.points_xy()
    per = []
    for g in blocks:
        d = ts.floored_distances(pts[np.asarray(g)], dmap.sensor_xy())
        per.append((model.power_table(d), model.variance_table(d)))
    shapes = [len(g) for g in blocks]
    logw = np.empty(int(np.prod(shapes)))
    for flat in range(logw.size):
        rem, digits = flat, []
        for n in reversed(shapes):
            rem, dg = divmod(rem, n)
            digits.append(dg)
        digits = digits[::-1]
        P = np.stack([per[r][0][digits[r]] for r in range(len(blocks))])
        V = np.stack([per[r][1][digits[r]] for r in range(len(blocks))])
        dom = np.argmax(P, axis=0)
        var = V[dom, np.arange(P.shape[1])]
        mean_db = 10.0 * np.log10(P.sum(axis=0))
        logw[flat] = norm.logpdf(z, loc=mean_db, scale=np.sqrt(var)).sum()
    return np.exp(logw - logsumexp(logw))


def test_joint_posterior_matches_enumeration_two_targets(setup):
    model, dmap, grid = setup
    pair = (ts.Location(6.0, 6.0), ts.Location(18.0, 15.0))
    blocks = [ts.local_grid(grid, grid.nearest_index(pair[r]), 3) for r in range(2)]
    for seed in range(5):
        frame = ts.sample_measurements(model, dmap, pair, seed=seed)
        post = ts.joint_posterior(model, dmap, grid, blocks, frame)
        want = brute_force_joint(model, dmap, grid, blocks, frame.z)
        assert np.max(np.abs(post.probabilities() - want)) <= 1e-12
        assert abs(post.probabilities().sum() - 1.0) <= 1e-12


def test_joint_posterior_single_target_equals_grid_posterior(setup):
    model, dmap, grid = setup
    frame = ts.sample_measurements(model, dmap, ts.Location(10.0, 13.0), seed=4)
    joint = ts.joint_posterior(
        model, dmap, grid, [np.arange(grid.n)], frame
    )
    single = ts.posterior_update(model, dmap, grid, frame)
    assert np.max(np.abs(joint.probabilities() - single.probabilities())) <= 1e-12


def test_joint_posterior_mode_near_truth_at_low_noise(setup):
    _, dmap, grid = setup
    quiet = ts.PropagationModel(
        tuple(ts.LogLinearModel(-38.0, 2.1, 0.02) for _ in range(dmap.s))
    )
    pair = (grid.point(20), grid.point(58))
    blocks = [ts.local_grid(grid, 20, 3), ts.local_grid(grid, 58, 3)]
    frame = ts.sample_measurements(quiet, dmap, pair, seed=1)
    post = ts.joint_posterior(quiet, dmap, grid, blocks, frame)
    best = int(np.argmax(post.log_probs))
    assert post.decompose(best) == (20, 58)
    hyp = post.hypothesis(best, grid)
    assert hyp.components == pair


def test_joint_posterior_flat_index_order(setup):
    model, dmap, grid = setup
    blocks = [np.array([5, 9]), np.array([11, 21, 33])]
    frame = ts.sample_measurements(
        model, dmap, (grid.point(5), grid.point(21)), seed=9
    )
    post = ts.joint_posterior(model, dmap, grid, blocks, frame)
    assert post.sizes == (2, 3)
    # last target varies fastest
    want = [(5, 11), (5, 21), (5, 33), (9, 11), (9, 21), (9, 33)]
    assert [post.decompose(f) for f in range(6)] == want


def test_joint_posterior_capacity_and_validation(setup):
    model, dmap, grid = setup
    frame = ts.sample_measurements(model, dmap, ts.Location(5.0, 5.0), seed=0)
    big = ts.local_grid(grid, 40, 5)
    with pytest.raises(CapacityError):
        ts.joint_posterior(model, dmap, grid, [big, big], frame, cap=100)
    with pytest.raises(ParameterError):
        ts.joint_posterior(model, dmap, grid, [], frame)
    with pytest.raises(ParameterError):
        ts.joint_posterior(model, dmap, grid, [np.array([], dtype=int)], frame)
    with pytest.raises(ParameterError):
        ts.joint_posterior(model, dmap, grid, [np.array([grid.n])], frame)


# ---------------------------------------------------------------------------
# tracking runs
# ---------------------------------------------------------------------------


def walk(start, vel, n, dt=1.0):
    return [
        ts.Location(start.x + vel[0] * dt * t, start.y + vel[1] * dt * t)
        for t in range(n)
    ]


def two_target_frames(model, dmap, n, seed0=0):
    a = walk(ts.Location(4.0, 4.0), (0.5, 0.3), n)
    b = walk(ts.Location(20.0, 18.0), (-0.4, -0.2), n)
    return [
        ts.sample_measurements(model, dmap, (a[t], b[t]), seed=seed0 + t, t=t)
        for t in range(n)
    ]


def test_run_multi_target_shapes_and_bounds(setup):
    model, dmap, grid = setup
    frames = two_target_frames(model, dmap, 12)
    params = ts.ListParams(3, 4)
    sched = ts.GridSchedule(t_sync=4, side_schedule=(3, 5))
    run = ts.run_multi_target(model, dmap, grid, frames, params, 2, sched)
    assert run.n_frames == 12
    assert np.all(run.set_sizes <= params.k * params.m * 2)
    assert np.all(run.set_sizes >= params.m)
    again = ts.run_multi_target(model, dmap, grid, frames, params, 2, sched)
    assert np.array_equal(run.outcomes, again.outcomes)
    assert np.array_equal(run.set_sizes, again.set_sizes)


def test_run_multi_target_noiseless_synced_every_tick(setup):
    _, dmap, grid = setup
    clean = ts.PropagationModel(
        tuple(ts.LogLinearModel(-38.0, 2.1, 0.0) for _ in range(dmap.s))
    )
    # targets pinned to grid points and re-centered every tick
    pts = [grid.point(12), grid.point(66)]
    frames = [
        ts.sample_measurements(clean, dmap, tuple(pts), seed=t, t=t)
        for t in range(8)
    ]
    sched = ts.GridSchedule(t_sync=1, side_schedule=(3,))
    run = ts.run_multi_target(clean, dmap, grid, frames, ts.ListParams(1, 4), 2, sched)
    assert run.accuracy == 1.0


def test_run_multi_target_stale_sync_hurts(setup):
    # the recommended set must stay selective (k*m*N well under s) or
    # containment succeeds no matter where the blocks sit
    model, dmap, grid = setup
    frames = two_target_frames(model, dmap, 24)
    params = ts.ListParams(1, 1)
    tight = ts.GridSchedule(t_sync=1, side_schedule=(3,))
    stale = ts.GridSchedule(t_sync=24, side_schedule=(3,))
    acc_tight = ts.run_multi_target(model, dmap, grid, frames, params, 1, tight).accuracy
    acc_stale = ts.run_multi_target(model, dmap, grid, frames, params, 1, stale).accuracy
    assert acc_tight >= acc_stale + 0.2


def test_run_multi_target_validation(setup):
    model, dmap, grid = setup
    sched = ts.GridSchedule(t_sync=4)
    params = ts.ListParams(1, 2)
    with pytest.raises(ParameterError):
        ts.run_multi_target(model, dmap, grid, [], params, 1, sched)
    plain = ts.MeasurementFrame(0, np.zeros(dmap.s))
    with pytest.raises(ParameterError):
        ts.run_multi_target(model, dmap, grid, [plain], params, 1, sched)
    f0 = ts.sample_measurements(model, dmap, ts.Location(5.0, 5.0), seed=0, t=0)
    f1 = ts.sample_measurements(
        model, dmap, (ts.Location(5.0, 5.0), ts.Location(9.0, 9.0)), seed=1, t=1
    )
    with pytest.raises(ParameterError):
        ts.run_multi_target(model, dmap, grid, [f0, f1], params, 1, sched)
    with pytest.raises(ParameterError):
        ts.run_multi_target(model, dmap, grid, [f0], params, 0, sched)
    with pytest.raises(ParameterError):
        ts.run_multi_target(model, dmap, grid, [f0], ts.ListParams(1, dmap.s + 1), 1, sched)
