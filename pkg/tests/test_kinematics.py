import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gormkit.kinematics import (
    ArmModel,
    ConfigurationError,
    IkParams,
    Joint,
    default_arm,
    forward_kinematics,
    ik_seeds,
    jacobian,
    planar_2r_arm,
    reachable_any_seed,
    solve_ik,
    sweep_reachability,
    within_limits,
)
from gormkit.transforms import Pose, geodesic_distance, quat_to_matrix


def chain_oracle(arm, q):
    """Homogeneous product of joint origins and axis-angle rotations via scipy."""
    T = np.eye(4)
    for j, a in zip(arm.joints, q):
        step = np.eye(4)
        step[:3, :3] = Rotation.from_rotvec(np.asarray(j.axis) * a).as_matrix()
        T = T @ j.origin.as_matrix() @ step
    return T @ arm.tcp_offset.as_matrix()


def fd_jacobian(arm, q, h=1e-6):
    J = np.zeros((6, arm.n_joints))
    for i in range(arm.n_joints):
        dq = np.zeros(arm.n_joints)
        dq[i] = h
        a, b = forward_kinematics(arm, q + dq), forward_kinematics(arm, q - dq)
        J[:3, i] = (a.translation - b.translation) / (2 * h)
        # angular velocity from dR R^T
        Ra, Rb = quat_to_matrix(a.rotation), quat_to_matrix(b.rotation)
        R = quat_to_matrix(forward_kinematics(arm, q).rotation)
        W = (Ra - Rb) / (2 * h) @ R.T
        J[3:, i] = [W[2, 1], W[0, 2], W[1, 0]]
    return J


def random_q(arm, rng, n):
    return rng.uniform(arm.lower, arm.upper, size=(n, arm.n_joints))


class TestForwardKinematics:
    def test_planar_straight(self):
        p = forward_kinematics(planar_2r_arm(), [0.0, 0.0])
        np.testing.assert_allclose(p.translation, [2, 0, 0], atol=1e-12)
        np.testing.assert_allclose(quat_to_matrix(p.rotation), np.eye(3), atol=1e-12)

    def test_planar_mirror(self):
        p = forward_kinematics(planar_2r_arm(), [math.pi, 0.0])
        np.testing.assert_allclose(p.translation, [-2, 0, 0], atol=1e-12)

    def test_planar_elbow(self):
        # x = cos q1 + cos(q1 + q2), y = sin q1 + sin(q1 + q2)
        p = forward_kinematics(planar_2r_arm(), [math.pi / 2, -math.pi / 2])
        np.testing.assert_allclose(p.translation, [1, 1, 0], atol=1e-12)

    def test_planar_trig(self, rng):
        arm = planar_2r_arm()
        for q1, q2 in random_q(arm, rng, 50):
            p = forward_kinematics(arm, [q1, q2])
            ref = [math.cos(q1) + math.cos(q1 + q2), math.sin(q1) + math.sin(q1 + q2), 0.0]
            np.testing.assert_allclose(p.translation, ref, atol=1e-12)

    def test_default_arm_matches_chain_oracle(self, arm, rng):
        for q in random_q(arm, rng, 100):
            np.testing.assert_allclose(forward_kinematics(arm, q).as_matrix(), chain_oracle(arm, q),
                                       atol=1e-12)

    def test_dimension_mismatch(self, arm):
        with pytest.raises(ConfigurationError):
            forward_kinematics(arm, [0.0, 0.0])

    def test_deterministic(self, arm, rng):
        q = random_q(arm, rng, 1)[0]
        assert forward_kinematics(arm, q) == forward_kinematics(arm, q)


class TestJacobian:
    def test_planar_straight(self):
        J = jacobian(planar_2r_arm(), [0.0, 0.0])
        np.testing.assert_allclose(J[1], [2.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(J[0], [0.0, 0.0], atol=1e-12)

    def test_angular_columns_are_joint_axes(self, arm, rng):
        for q in random_q(arm, rng, 20):
            J = jacobian(arm, q)
            T = np.eye(4)
            for i, (j, a) in enumerate(zip(arm.joints, q)):
                T = T @ j.origin.as_matrix()
                np.testing.assert_allclose(J[3:, i], T[:3, :3] @ j.axis, atol=1e-12)
                step = np.eye(4)
                step[:3, :3] = Rotation.from_rotvec(np.asarray(j.axis) * a).as_matrix()
                T = T @ step

    @pytest.mark.parametrize("make", [default_arm, planar_2r_arm], ids=["6dof", "2r"])
    def test_finite_differences(self, make, rng):
        arm = make()
        for q in random_q(arm, rng, 100):
            np.testing.assert_allclose(jacobian(arm, q), fd_jacobian(arm, q), atol=1e-5)


class TestSolveIk:
    def test_fixed_point(self, arm, rng):
        q = random_q(arm, rng, 1)[0]
        sol = solve_ik(arm, forward_kinematics(arm, q), q)
        np.testing.assert_array_equal(sol, q)

    def test_outside_reach_ball(self, arm):
        far = Pose([arm.max_reach + 0.01, 0.0, 0.0])
        assert solve_ik(arm, far, arm.mid_limits) is None
        assert not reachable_any_seed(arm, far, ik_seeds(arm, 3))

    def test_nan_seed(self, arm):
        with pytest.raises(ValueError):
            solve_ik(arm, Pose([0.3, 0, 0.3]), [np.nan] * 6)

    def test_round_trip_from_mid_limits(self, arm, rng):
        params = IkParams()
        qs = random_q(arm, rng, 300)
        ok = 0
        for q in qs:
            target = forward_kinematics(arm, q)
            sol = solve_ik(arm, target, arm.mid_limits, params)
            if sol is None:
                continue
            ok += 1
            got = forward_kinematics(arm, sol)
            assert np.linalg.norm(got.translation - target.translation) <= params.pos_tol
            assert geodesic_distance(got.rotation, target.rotation) <= params.rot_tol
            assert within_limits(arm, sol)
        assert ok / len(qs) >= 0.95

    def test_deterministic(self, arm, rng):
        q = random_q(arm, rng, 1)[0]
        t = forward_kinematics(arm, q)
        a, b = solve_ik(arm, t, arm.mid_limits), solve_ik(arm, t, arm.mid_limits)
        assert (a is None and b is None) or np.array_equal(a, b)

    def test_sweep_matches_scalar_calls(self, arm, rng):
        seeds = ik_seeds(arm, 3, 7)
        pos = rng.uniform(-0.5, 0.5, size=(6, 3))
        rots = Rotation.random(5, random_state=3).as_matrix()
        table = sweep_reachability(arm, pos, rots, seeds)
        for i, p in enumerate(pos):
            for j, R in enumerate(rots):
                target = Pose.from_matrix(np.block([[R, p[:, None]], [np.zeros((1, 3)), np.ones((1, 1))]]))
                assert table[i, j] == reachable_any_seed(arm, target, seeds)


class TestLimits:
    def test_lower_limits_inclusive(self, arm):
        assert within_limits(arm, arm.lower)

    def test_exceeding_one_limit(self, arm):
        q = arm.mid_limits.copy()
        q[2] = arm.upper[2] + 1e-3
        assert not within_limits(arm, q)

    def test_zero_within_symmetric_limits(self):
        assert within_limits(planar_2r_arm(), [0.0, 0.0])

    def test_dimension_mismatch(self, arm):
        with pytest.raises(ConfigurationError):
            within_limits(arm, [0.0])


class TestModel:
    def test_rejects_bad_axis_and_limits(self):
        with pytest.raises(ConfigurationError):
            Joint([1, 1, 0], Pose(), (-1, 1))
        with pytest.raises(ConfigurationError):
            Joint([0, 0, 1], Pose(), (1, -1))
        with pytest.raises(ConfigurationError):
            ArmModel(())

    def test_ik_params_validation(self):
        with pytest.raises(ConfigurationError):
            IkParams(damping=-1)
        with pytest.raises(ConfigurationError):
            IkParams(max_iters=0)

    def test_default_arm_reach(self, arm):
        assert arm.max_reach == pytest.approx(0.74)

    def test_tool_roll_free(self, arm):
        assert arm.tool_roll_free
        assert not planar_2r_arm().tool_roll_free

    def test_tool_roll_invariance(self, arm, rng):
        # spinning the last joint rolls the tool about its approach axis in place
        for q in random_q(arm, rng, 20):
            a = forward_kinematics(arm, q)
            q2 = q.copy()
            q2[-1] = q[-1] + 1.0 if q[-1] + 1.0 <= arm.upper[-1] else q[-1] - 1.0
            b = forward_kinematics(arm, q2)
            np.testing.assert_allclose(a.translation, b.translation, atol=1e-12)
            np.testing.assert_allclose(quat_to_matrix(a.rotation)[:, 2],
                                       quat_to_matrix(b.rotation)[:, 2], atol=1e-12)

    def test_digest_tracks_geometry(self, arm):
        assert arm.digest == default_arm().digest
        assert len(arm.digest) == 32
        assert planar_2r_arm().digest != arm.digest

    def test_seeds(self, arm):
        s = ik_seeds(arm, 3, 0)
        np.testing.assert_array_equal(s[0], arm.mid_limits)
        np.testing.assert_array_equal(s, ik_seeds(arm, 3, 0))
        assert np.all((s >= arm.lower) & (s <= arm.upper))
