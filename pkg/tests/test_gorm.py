import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from gormkit.gorm import (
    Box,
    EmptyDistribution,
    Environment,
    GormDistribution,
    LocomotionLimits,
    OrmTable,
    build_gorm,
    candidate_masks,
    distances,
    gorm_reward,
    invert_rm,
    min_distance,
)
from gormkit.rmap import GridSpec, ReachabilityMap, query_reachable, sample_orientations
from gormkit.transforms import Pose, compose_batch, pose_distance, quat_from_rpy


def one_bit_map(voxel=5, orient=3):
    grid = GridSpec((-0.2, -0.2, -0.2), 0.1, (5, 5, 5))
    o = sample_orientations(4, 2)
    bins = np.zeros((grid.n_voxels, len(o)), dtype=bool)
    bins[voxel, orient] = True
    return ReachabilityMap(grid, o, bins)


def random_pose(rng, scale=1.0):
    q = rng.normal(size=4)
    return Pose(rng.uniform(-scale, scale, 3), q / np.linalg.norm(q))


def scipy_rot(q):
    q = np.atleast_2d(q)
    return Rotation.from_quat(q[:, [1, 2, 3, 0]])


class TestInvert:
    def test_single_entry_is_inverse(self):
        rm = one_bit_map()
        orm = invert_rm(rm)
        assert len(orm) == 1
        P = Pose(rm.grid.centers()[5], rm.orient.quats[3])
        e = orm[0]
        np.testing.assert_allclose(e.base_in_tcp.as_matrix(), np.linalg.inv(P.as_matrix()), atol=1e-12)
        assert e.score == pytest.approx(1 / 8)

    def test_mount_is_applied(self):
        rm = one_bit_map()
        mount = Pose.from_xyz_rpy([0.15, 0, 0.08], [0, 0.2, 0.1])
        P = Pose(rm.grid.centers()[5], rm.orient.quats[3])
        e = invert_rm(rm, mount)[0]
        np.testing.assert_allclose(e.base_in_tcp.as_matrix(), (mount @ P).inverse().as_matrix(), atol=1e-12)

    def test_count_equals_set_bits(self, small_map):
        assert len(invert_rm(small_map)) == small_map.n_set
        assert len(invert_rm(small_map, roll_subdivisions=3)) == 3 * small_map.n_set

    def test_scores_positive_and_match_index(self, small_map):
        orm = invert_rm(small_map)
        assert np.all(orm.score > 0)
        np.testing.assert_array_equal(orm.score, small_map.index[orm.voxel])

    def test_round_trip_through_query(self, small_map, arm, rng):
        orm = invert_rm(small_map, arm.mount)
        target = random_pose(rng)
        for i in rng.choice(len(orm), 50, replace=False):
            base = target @ orm[i].base_in_tcp
            in_arm = arm.mount.inverse() @ base.inverse() @ target
            assert query_reachable(small_map, in_arm)

    def test_roll_copies_rotate_about_tool_axis(self, small_map):
        orm1, orm2 = invert_rm(small_map), invert_rm(small_map, roll_subdivisions=2)
        n = len(orm1)
        half = math.pi / small_map.orient.n_rolls
        for i in (0, n // 2, n - 1):
            a, b = orm1[i].base_in_tcp, orm2[n + i].base_in_tcp
            expect = Pose.from_xyz_rpy([0, 0, 0], [0, 0, -half]) @ a
            np.testing.assert_allclose(b.as_matrix(), expect.as_matrix(), atol=1e-12)
            assert orm2[n + i].score == orm1[i].score

    def test_rejects_bad_subdivisions(self, small_map):
        with pytest.raises(ValueError):
            invert_rm(small_map, roll_subdivisions=0)

    def test_table_validation(self):
        with pytest.raises(ValueError):
            OrmTable(np.zeros((1, 3)), np.array([[1.0, 0, 0, 0]]), np.array([0.0]),
                     np.zeros(1, int), np.zeros(1, int))


def brute_force_keep(orm, target, limits, env, thr, start_xy=(0.0, 0.0)):
    """Independent per-candidate re-check of the three filters with scipy rotations."""
    T = target.as_matrix()
    keep = []
    lo, hi = np.asarray(env.robot_body.lo), np.asarray(env.robot_body.hi)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    h_mid = 0.5 * (limits.height[0] + limits.height[1])
    h_span = 0.5 * (limits.height[1] - limits.height[0])
    for i in range(len(orm)):
        if orm.score[i] < thr:
            continue
        B = np.eye(4)
        B[:3, :3] = scipy_rot(orm.q[i]).as_matrix()[0]
        B[:3, 3] = orm.t[i]
        W = T @ B
        yaw, pitch, roll = Rotation.from_matrix(W[:3, :3]).as_euler("ZYX")
        z = W[2, 3]
        # pitch window narrows linearly toward the height limits
        frac = min(abs(z - h_mid) / h_span, 1.0)
        p_hi = limits.pitch[1] - (limits.pitch[1] - limits.pitch_at_extremes) * frac
        p_lo = limits.pitch[0] + (-limits.pitch_at_extremes - limits.pitch[0]) * frac
        if abs(roll) > limits.roll_tolerance or not (p_lo <= pitch <= p_hi):
            continue
        if not (limits.height[0] <= z <= limits.height[1]):
            continue
        if np.hypot(W[0, 3] - start_xy[0], W[1, 3] - start_xy[1]) > limits.planar_range:
            continue
        world = corners @ W[:3, :3].T + W[:3, 3]
        amin, amax = world.min(axis=0), world.max(axis=0)
        if amin[2] < env.ground_height:
            continue
        if any(np.all(amin < b.hi) and np.all(amax > b.lo) for b in env.boxes):
            continue
        keep.append(i)
    return np.array(keep, dtype=np.int64)


class TestFilters:
    def test_below_ground_removed(self):
        env = Environment()
        t = np.array([[0.0, 0.0, 0.05], [0.0, 0.0, 0.5]])
        q = np.array([[1.0, 0, 0, 0]] * 2)
        loco, free, _ = candidate_masks(t, q, np.ones(2), LocomotionLimits.unbounded(), env, 0.0)
        assert free.tolist() == [False, True]

    def test_roll_beyond_tolerance_removed(self):
        lim = LocomotionLimits()
        q = np.stack([quat_from_rpy(lim.roll_tolerance + 0.1, 0, 0), quat_from_rpy(0.05, 0, 0)])
        t = np.array([[0.0, 0.0, 0.45]] * 2)
        loco, _, _ = candidate_masks(t, q, np.ones(2), lim, Environment(), 0.0)
        assert loco.tolist() == [False, True]

    def test_box_overlap_removed(self):
        env = Environment().with_boxes(Box((1.0, -0.5, 0.0), (2.0, 0.5, 1.0)))
        t = np.array([[0.8, 0.0, 0.45], [0.5, 0.0, 0.45]])
        q = np.array([[1.0, 0, 0, 0]] * 2)
        _, free, _ = candidate_masks(t, q, np.ones(2), LocomotionLimits(), env, 0.0)
        # body half-length 0.3: the first pose reaches into the box
        assert free.tolist() == [False, True]

    def test_pitch_window_narrows_with_height(self):
        lim = LocomotionLimits()
        lo, hi = lim.pitch_bounds(np.array([0.475, 0.30, 0.65, 0.3875]))
        np.testing.assert_allclose(hi, [0.4, 0.1, 0.1, 0.25])
        np.testing.assert_allclose(lo, -hi)

    def test_limits_validation(self):
        with pytest.raises(ValueError):
            LocomotionLimits(height=(0.6, 0.3))
        with pytest.raises(ValueError):
            LocomotionLimits(roll_tolerance=-0.1)
        with pytest.raises(ValueError):
            Box((0, 0, 1), (1, 1, 0))

    @pytest.mark.parametrize("height", [0.0, 0.3, 0.75, 1.0])
    @pytest.mark.parametrize("case", ["side", "tilted"])
    def test_matches_brute_force(self, small_map, arm, height, case):
        orm = invert_rm(small_map, arm.mount)
        if case == "side":
            rpy, lim = [0.0, math.pi / 2, 0.3], LocomotionLimits(planar_range=3.0)
        else:
            # the coarse orientation set needs a wide roll window to keep top-down candidates
            rpy = [0.2, math.pi - 0.3, 0.7]
            lim = LocomotionLimits(pitch=(-0.8, 0.8), roll_tolerance=0.8, planar_range=3.0,
                                   pitch_at_extremes=0.3)
        target = Pose.from_xyz_rpy([0.3, -0.2, height + 0.05], rpy)
        env = Environment().with_boxes(Box((0.1, -0.4, 0.0), (0.5, 0.0, height)),
                                       Box((-1.2, 0.4, 0.0), (-0.8, 0.9, 0.6)))
        ref = brute_force_keep(orm, target, lim, env, 0.3)
        assert len(ref) > 0
        np.testing.assert_array_equal(build_gorm(orm, target, lim, env, 0.3).source, ref)

    def test_every_candidate_passes_filters(self, small_map, arm):
        orm = invert_rm(small_map, arm.mount)
        target = Pose.from_xyz_rpy([0, 0, 0.8], [0, math.pi / 2, 0])
        g = build_gorm(orm, target, LocomotionLimits(), Environment(), 0.4)
        t, q = g.world()
        loco, free, reach = candidate_masks(t, q, g.score, LocomotionLimits(), Environment(), 0.4)
        assert loco.all() and free.all() and reach.all()
        assert np.all(np.diff(g.source) > 0)

    def test_planar_range_empties(self, small_map, arm):
        orm = invert_rm(small_map, arm.mount)
        far = Pose.from_xyz_rpy([100.0, 0, 0.8], [0, math.pi, 0])
        with pytest.raises(EmptyDistribution):
            build_gorm(orm, far, LocomotionLimits(planar_range=5.0), Environment(), 0.3, (0.0, 0.0))

    def test_threshold_validation(self, small_map):
        with pytest.raises(ValueError):
            build_gorm(invert_rm(small_map), Pose(), reach_threshold=1.5)

    def test_distribution_rejects_low_scores(self):
        with pytest.raises(ValueError):
            GormDistribution(Pose(), np.zeros((1, 3)), np.array([[1.0, 0, 0, 0]]), np.array([0.1]), 0.3)


class TestFrameInvariance:
    def test_candidates_follow_target(self, small_map, arm, rng):
        orm = invert_rm(small_map, arm.mount)
        free = dict(limits=LocomotionLimits.unbounded(), env=Environment.empty(), reach_threshold=0.0)
        p = random_pose(rng)
        base = build_gorm(orm, p, **free)
        t0, q0 = base.world()
        for _ in range(20):
            T = random_pose(rng, 3.0)
            moved = build_gorm(orm, T @ p, **free)
            t1, q1 = moved.world()
            te, qe = compose_batch(T.translation, T.rotation, t0, q0)
            assert len(moved) == len(base)
            np.testing.assert_allclose(t1, te, atol=1e-9)
            # compare rotations sign-free through their matrices
            np.testing.assert_allclose(scipy_rot(q1).as_matrix(), scipy_rot(qe).as_matrix(), atol=1e-9)

    def test_stored_in_target_frame(self, small_map, arm, rng):
        orm = invert_rm(small_map, arm.mount)
        g = build_gorm(orm, random_pose(rng), LocomotionLimits.unbounded(), Environment.empty(), 0.0)
        np.testing.assert_array_equal(g.t, orm.t)
        np.testing.assert_array_equal(g.q, orm.q)


def random_gorm(rng, n):
    q = rng.normal(size=(n, 4))
    return GormDistribution(random_pose(rng), rng.uniform(-2, 2, (n, 3)),
                            q / np.linalg.norm(q, axis=1, keepdims=True), np.ones(n), 0.0)


class TestDistance:
    def test_zero_at_candidate(self, rng):
        g = random_gorm(rng, 50)
        for k in (0, 17, 49):
            d, i = min_distance(g, g.world_pose(k))
            assert i == k and d == pytest.approx(0.0, abs=1e-9)

    def test_single_candidate_offset(self):
        g = GormDistribution(Pose(), np.zeros((1, 3)), np.array([[1.0, 0, 0, 0]]), np.ones(1), 0.0)
        d, i = min_distance(g, Pose([0.5, 0, 0]))
        assert (d, i) == (pytest.approx(0.5), 0)

    @pytest.mark.parametrize("lam", [0.0, 1.0, 2.5])
    def test_matches_linear_scan(self, rng, lam):
        g = random_gorm(rng, 1000)
        for _ in range(5):
            base = random_pose(rng, 2.0)
            scan = [pose_distance(base, g.world_pose(i), lam) for i in range(len(g))]
            d, k = min_distance(g, base, lam)
            np.testing.assert_allclose(distances(g, base, lam), scan, atol=1e-12)
            assert k == int(np.argmin(scan)) and d == pytest.approx(min(scan), abs=1e-12)

    def test_ties_pick_lowest_index(self):
        t = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
        g = GormDistribution(Pose(), t, np.tile([1.0, 0, 0, 0], (3, 1)), np.ones(3), 0.0)
        assert min_distance(g, Pose())[1] == 0

    def test_empty(self):
        g = GormDistribution(Pose(), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), 0.0)
        with pytest.raises(EmptyDistribution):
            min_distance(g, Pose())

    def test_negative_lambda(self, rng):
        with pytest.raises(ValueError):
            distances(random_gorm(rng, 3), Pose(), -0.1)


class TestReward:
    def test_values(self):
        assert gorm_reward(0.0) == 1.0
        assert gorm_reward(1.0) == pytest.approx(math.exp(-1), abs=1e-12)
        assert gorm_reward(2.0) == pytest.approx(0.018316, abs=1e-6)

    def test_negative(self):
        with pytest.raises(ValueError):
            gorm_reward(-0.1)
        with pytest.raises(ValueError):
            gorm_reward(float("nan"))

    @given(st.floats(0, 5), st.floats(0, 5))
    def test_monotone_and_bounded(self, a, b):
        ra, rb = gorm_reward(a), gorm_reward(b)
        assert 0 <= ra <= 1
        if a <= b:
            assert ra >= rb
        if b - a > 1e-6 and rb > 0:
            assert ra > rb

    @settings(max_examples=50)
    @given(st.floats(0, 10))
    def test_in_unit_interval(self, d):
        r = gorm_reward(d)
        assert 0 < r <= 1 or d > 26
