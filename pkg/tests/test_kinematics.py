"""
Unit tests for forward kinematics, the Jacobian and IK.
"""

import unittest
import json
import math
import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import assets
from geometry import Pose3
from kinematics import (
    JointLimitError,
    N_CONFIG,
    check_limits,
    ee_error,
    fk,
    ik_step,
    make_config,
    manipulator_jacobian,
    robot_from_dict,
    se3_exp,
    se3_log,
    solve_ik,
    track,
    within_limits,
)
from planner import PlannerParams

MODEL = assets.default_robot()

# torso offset x plus the arm link offsets plus the ee offset
REACH_X = -0.086 + 0.119 + 0.117 + 0.219 + 0.133 + 0.197 + 0.1245 + 0.1385 + 0.16645
ZERO_Z = 0.377 + 0.348 + 0.06


def zero_config(base=(0.0, 0.0, 0.0), torso=0.0):
    manip = np.zeros(8)
    manip[0] = torso
    return make_config(base, manip)


class TestRobotModel(unittest.TestCase):

    def test_bundled_robot(self):
        self.assertEqual(len(MODEL.joints), 7)
        self.assertEqual(MODEL.torso_limits, (0.0, 0.386))
        self.assertEqual(len(MODEL.stow), 8)
        self.assertTrue(within_limits(MODEL, make_config(manip=MODEL.stow)))
        self.assertTrue(within_limits(MODEL, make_config(manip=MODEL.ready)))

    def test_wrong_joint_count(self):
        with open(assets.ROBOT_FILE, "r", encoding="utf-8") as f:
            data = json.load(f)
        data["arm"] = data["arm"][:6]

        with self.assertRaises(ValueError):
            robot_from_dict(data)

    def test_inverted_limits(self):
        with open(assets.ROBOT_FILE, "r", encoding="utf-8") as f:
            data = json.load(f)
        data["arm"][1]["limits"] = [1.0, -1.0]

        with self.assertRaises(ValueError):
            robot_from_dict(data)


class TestConfigurations(unittest.TestCase):

    def test_make_config_defaults_to_stow(self):
        q = make_config((1.0, 2.0, 0.5), model=MODEL)

        self.assertEqual(q.shape, (N_CONFIG,))
        np.testing.assert_array_equal(q[3:], MODEL.stow)

    def test_yaw_is_wrapped(self):
        q = make_config((0.0, 0.0, 3 * math.pi))

        self.assertAlmostEqual(q[2], math.pi)

    def test_limit_violation_names_joint(self):
        q = zero_config()
        q[4] = 2.0

        with self.assertRaises(JointLimitError) as cm:
            check_limits(MODEL, q)

        self.assertIn("shoulder_pan", str(cm.exception))
        self.assertFalse(within_limits(MODEL, q))

    def test_torso_limit(self):
        q = zero_config(torso=0.5)

        with self.assertRaises(JointLimitError):
            fk(MODEL, q)


class TestForwardKinematics(unittest.TestCase):

    def test_zero_configuration(self):
        ee = fk(MODEL, zero_config()).ee

        np.testing.assert_allclose(ee.position, [REACH_X, 0.0, ZERO_Z], atol=1e-12)
        self.assertAlmostEqual(ee.angle_to(Pose3()), 0.0, places=9)

    def test_torso_lifts_ee(self):
        ee = fk(MODEL, zero_config(torso=0.3)).ee

        np.testing.assert_allclose(ee.position, [REACH_X, 0.0, ZERO_Z + 0.3], atol=1e-12)

    def test_base_pose_moves_ee(self):
        ee = fk(MODEL, zero_config(base=(1.0, 2.0, math.pi / 2))).ee

        np.testing.assert_allclose(ee.position, [1.0, 2.0 + REACH_X, ZERO_Z], atol=1e-12)
        self.assertAlmostEqual(ee.yaw(), math.pi / 2)

    def test_shoulder_pan(self):
        q = zero_config()
        q[4] = math.pi / 2
        pan_x = -0.086 + 0.119

        ee = fk(MODEL, q).ee

        np.testing.assert_allclose(ee.position, [pan_x, REACH_X - pan_x, ZERO_Z], atol=1e-12)

    def test_spheres_follow_base(self):
        result = fk(MODEL, zero_config(base=(3.0, -1.0, 0.7)))

        self.assertEqual(len(result.sphere_radii), MODEL.n_spheres())
        self.assertEqual(result.sphere_centers.shape, (MODEL.n_spheres(), 3))
        np.testing.assert_allclose(result.sphere_centers[0], [3.0, -1.0, 0.18], atol=1e-12)
        self.assertAlmostEqual(result.sphere_radii[0], MODEL.base_radius)


class TestSe3(unittest.TestCase):

    def test_exp_log_inverse(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            twist = np.concatenate([rng.uniform(-1, 1, 3), rng.uniform(-2, 2, 3)])
            np.testing.assert_allclose(se3_log(se3_exp(twist)), twist, atol=1e-9)

    def test_pure_translation(self):
        pose = se3_exp([0.3, -0.2, 0.1, 0.0, 0.0, 0.0])

        np.testing.assert_allclose(pose.position, [0.3, -0.2, 0.1])


class TestJacobian(unittest.TestCase):

    def test_torso_column(self):
        jac = manipulator_jacobian(MODEL, zero_config(torso=0.1))

        np.testing.assert_allclose(jac[:, 0], [0, 0, 1, 0, 0, 0], atol=1e-6)

    def test_shoulder_pan_column(self):
        jac = manipulator_jacobian(MODEL, zero_config())
        lever = REACH_X - (-0.086 + 0.119)

        np.testing.assert_allclose(jac[:, 1], [0, lever, 0, 0, 0, 1], atol=1e-6)

    def test_predicts_small_motion(self):
        q = make_config(manip=MODEL.ready)
        dq = np.full(8, 1e-4)
        jac = manipulator_jacobian(MODEL, q)
        q2 = q.copy()
        q2[3:] += dq

        moved = fk(MODEL, q2).ee.position - fk(MODEL, q).ee.position

        np.testing.assert_allclose(moved, (jac @ dq)[:3], atol=1e-7)


class TestInverseKinematics(unittest.TestCase):

    def setUp(self):
        self.q_goal = make_config(manip=MODEL.ready)
        self.target = fk(MODEL, self.q_goal).ee
        self.params = PlannerParams()

    def test_ik_step_reduces_error(self):
        q = self.q_goal.copy()
        q[4:] += 0.05

        before = ee_error(MODEL, q, self.target)
        after = ee_error(MODEL, ik_step(MODEL, q, self.target), self.target)

        self.assertLess(after[0], before[0])

    def test_ik_step_at_target_is_noop(self):
        np.testing.assert_allclose(ik_step(MODEL, self.q_goal, fk(MODEL, self.q_goal).ee_matrix()),
                                   self.q_goal, atol=1e-9)

    def test_ik_step_respects_limits(self):
        q = self.q_goal.copy()
        far = Pose3.from_xyz_yaw(5.0, 5.0, 3.0, 0.0)
        for _ in range(10):
            q = ik_step(MODEL, q, far)
            self.assertTrue(within_limits(MODEL, q))

    def test_track_converges_nearby(self):
        q = self.q_goal.copy()
        q[4:] += 0.03

        q_out, ok = track(MODEL, q, self.target, 200, self.params.pos_tol, self.params.rot_tol, 0.05)

        self.assertTrue(ok)
        pos, rot = ee_error(MODEL, q_out, self.target)
        self.assertLessEqual(pos, self.params.pos_tol)
        self.assertLessEqual(rot, self.params.rot_tol)

    def test_base_never_moves(self):
        q = self.q_goal.copy()
        q[:3] = [1.0, -2.0, 0.3]
        target = fk(MODEL, q).ee
        q[5] += 0.1

        q_out = solve_ik(MODEL, q, target, self.params, np.random.default_rng(0))

        self.assertIsNotNone(q_out)
        np.testing.assert_array_equal(q_out[:3], q[:3])

    def test_unreachable(self):
        params = PlannerParams(ik_restarts=1, ik_solve_iters=30)
        far = Pose3.from_xyz_yaw(10.0, 0.0, 1.0, 0.0)

        self.assertIsNone(solve_ik(MODEL, self.q_goal, far, params, np.random.default_rng(0)))

    def test_accept_veto(self):
        q = self.q_goal.copy()
        q[5] += 0.05
        params = PlannerParams(ik_restarts=1)

        self.assertIsNone(solve_ik(MODEL, q, self.target, params, np.random.default_rng(0), accept=lambda c: False))


if __name__ == "__main__":
    unittest.main()
