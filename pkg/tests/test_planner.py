"""
Unit tests for collision checking, segment planners and anchor sequencing.
"""

import unittest
import math
import os
import sys
from dataclasses import replace

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import assets
from geometry import Obb3, Polygon, Pose3
from kinematics import ee_error, fk, make_config
from layout import FixturePlacement, Layout, Provenance, StoreSpec
from planner import (
    AnchorKind,
    AnchorPose,
    FailureReason,
    PlannerParams,
    PlanningFailure,
    SceneObstacles,
    Trajectory,
    config_in_collision,
    densify,
    fixture_boxes,
    load_anchor_template,
    plan_anchors,
    plan_base,
    plan_rrt_connect,
    plan_screw,
    resolve_anchors,
    screw_interp,
    store_obstacles,
    trajectory_records,
    trajectory_valid,
    wall_boxes,
)

MODEL = assets.default_robot()
ROOM = Polygon.rectangle(10, 10)
PARAMS = PlannerParams()


def room_scene(*boxes):
    return SceneObstacles(tuple(wall_boxes(ROOM)), tuple(boxes), ROOM)


def stowed(x=5.0, y=5.0, yaw=0.0):
    return make_config((x, y, yaw), model=MODEL)


def ready(x=5.0, y=5.0, yaw=0.0):
    return make_config((x, y, yaw), MODEL.ready)


class TestCollision(unittest.TestCase):

    def test_empty_room_is_free(self):
        self.assertFalse(config_in_collision(MODEL, stowed(), room_scene()))

    def test_box_on_base(self):
        box = Obb3(np.array([5.0, 5.0, 0.5]), np.array([0.1, 0.1, 0.5]))

        self.assertTrue(config_in_collision(MODEL, stowed(), room_scene(box)))

    def test_distant_box(self):
        box = Obb3(np.array([8.0, 8.0, 0.5]), np.array([0.1, 0.1, 0.5]))

        self.assertFalse(config_in_collision(MODEL, stowed(), room_scene(box)))

    def test_base_too_close_to_wall(self):
        self.assertTrue(config_in_collision(MODEL, stowed(0.2, 5.0), room_scene()))

    def test_base_outside_store(self):
        self.assertTrue(config_in_collision(MODEL, stowed(12.0, 5.0), SceneObstacles(walls=ROOM)))

    def test_margin_counts(self):
        # base sphere radius 0.28 at height 0.18; box face 0.285 m from the base centre
        box = Obb3(np.array([5.285 + 0.1, 5.0, 0.18]), np.array([0.1, 0.1, 0.1]))
        tight = SceneObstacles((), (box,), ROOM, margin=0.0)
        loose = SceneObstacles((), (box,), ROOM, margin=0.01)

        self.assertFalse(config_in_collision(MODEL, stowed(), tight))
        self.assertTrue(config_in_collision(MODEL, stowed(), loose))

    def test_negative_margin(self):
        with self.assertRaises(ValueError):
            SceneObstacles(margin=-0.1)

    def test_near_culls_far_boxes(self):
        near = Obb3(np.array([5.5, 5.0, 0.5]), np.array([0.1, 0.1, 0.5]))
        far = Obb3(np.array([9.0, 9.0, 0.5]), np.array([0.1, 0.1, 0.5]))

        culled = SceneObstacles((), (near, far), ROOM).near((5.0, 5.0), 1.0)

        self.assertEqual(len(culled), 1)


class TestSceneBoxes(unittest.TestCase):

    def test_walls_enclose_room(self):
        boxes = wall_boxes(ROOM)

        self.assertEqual(len(boxes), 4)
        for box in boxes:
            self.assertFalse(box.footprint().contains(np.array([[5.0, 5.0]]))[0])

    def test_shelf_boxes(self):
        templates = assets.load_templates()
        shelf = templates["shelf_2m_5"]
        placement = FixturePlacement("fx_000", shelf.id, (5.0, 5.0), 0.0, Provenance.SEEDED)

        boxes = fixture_boxes(placement, shelf)

        self.assertEqual(len(boxes), len(shelf.boards) + 3)
        self.assertTrue(all(b.label.startswith("fx_000/") for b in boxes))

    def test_store_obstacles(self):
        templates = assets.load_templates()
        shelf = templates["shelf_2m_5"]
        store = StoreSpec.rectangular(10, 10)
        layout = Layout(store, {shelf.id: shelf},
                        (FixturePlacement("fx_000", shelf.id, (5.0, 5.0), 0.0, Provenance.SEEDED),))

        scene = store_obstacles(layout)

        self.assertEqual(len(scene.static), len(shelf.boards) + 3 + 4)
        self.assertEqual(len(scene.dynamic), 0)


class TestDensify(unittest.TestCase):

    def test_step_bound_and_endpoints(self):
        a, b = stowed(), ready(6.0, 5.5, 1.0)
        steps = PARAMS.step_vector()

        dense = densify([a, b], steps)

        np.testing.assert_array_equal(dense[0], a)
        np.testing.assert_array_equal(dense[-1], b)
        for p, q in zip(dense, dense[1:]):
            self.assertTrue(np.all(np.abs(q - p) <= steps + 1e-12))

    def test_yaw_takes_short_way(self):
        a = stowed(yaw=math.pi - 0.045)
        b = stowed(yaw=-math.pi + 0.045)

        dense = densify([a, b], PARAMS.step_vector())

        self.assertEqual(len(dense), 6)

    def test_identical_configs(self):
        self.assertEqual(len(densify([stowed(), stowed()], PARAMS.step_vector())), 2)


class TestScrewInterp(unittest.TestCase):

    def test_endpoints_exact(self):
        a = Pose3.from_xyz_yaw(0, 0, 0, 0.2)
        b = Pose3.from_xyz_rpy([1, 2, 0.5], [0.3, 0.1, 1.2])

        poses = screw_interp(a, b, 7)

        self.assertEqual(len(poses), 7)
        self.assertIs(poses[0], a)
        self.assertIs(poses[-1], b)

    def test_pure_translation_evenly_spaced(self):
        a, b = Pose3(), Pose3.from_xyz_yaw(1.0, 0.0, 0.0, 0.0)

        xs = [p.position[0] for p in screw_interp(a, b, 5)]

        np.testing.assert_allclose(xs, [0, 0.25, 0.5, 0.75, 1.0], atol=1e-12)

    def test_constant_twist(self):
        a = Pose3.from_xyz_yaw(0.3, 0, 0, 0)
        b = Pose3.from_xyz_rpy([1, 1, 0.2], [0, 0.4, 1.5])
        poses = screw_interp(a, b, 6)

        rel = [poses[i].inverse().compose(poses[i + 1]) for i in range(5)]

        for r in rel[1:]:
            np.testing.assert_allclose(r.position, rel[0].position, atol=1e-9)
            self.assertAlmostEqual(r.angle_to(rel[0]), 0.0, places=7)

    def test_left_invariant(self):
        a = Pose3.from_xyz_yaw(0.3, -0.2, 0.1, 0.4)
        b = Pose3.from_xyz_rpy([1, 1, 0.2], [0.2, 0.4, 1.5])
        g = Pose3.from_xyz_rpy([-2.0, 0.5, 1.0], [0.7, -0.3, 2.2])

        moved = screw_interp(g.compose(a), g.compose(b), 6)
        expected = [g.compose(p) for p in screw_interp(a, b, 6)]

        for p, q in zip(moved, expected):
            np.testing.assert_allclose(p.position, q.position, atol=1e-9)
            self.assertAlmostEqual(p.angle_to(q), 0.0, places=7)

    def test_needs_two_poses(self):
        with self.assertRaises(ValueError):
            screw_interp(Pose3(), Pose3(), 1)


class TestPlanScrew(unittest.TestCase):

    def setUp(self):
        self.q = ready()
        ee = fk(MODEL, self.q).ee
        self.goal = Pose3(ee.position + np.array([0.05, 0.0, 0.0]), ee.orientation)

    def test_reaches_goal(self):
        scene = room_scene()

        traj = plan_screw(MODEL, self.q, self.goal, scene, PARAMS)

        self.assertIsInstance(traj, Trajectory)
        np.testing.assert_array_equal(traj.waypoints[0], self.q)
        pos, rot = ee_error(MODEL, traj.last, self.goal)
        self.assertLessEqual(pos, PARAMS.pos_tol)
        self.assertLessEqual(rot, PARAMS.rot_tol)
        np.testing.assert_array_equal(traj.waypoints[:, :3], np.tile(self.q[:3], (len(traj), 1)))
        self.assertEqual(trajectory_valid(MODEL, traj, scene, PARAMS, self.q), [])

    def test_already_there(self):
        traj = plan_screw(MODEL, self.q, fk(MODEL, self.q).ee, room_scene(), PARAMS)

        self.assertEqual(len(traj), 1)

    def test_blocked_goal(self):
        box = Obb3(self.goal.position, np.array([0.05, 0.05, 0.05]))

        res = plan_screw(MODEL, self.q, self.goal, room_scene(box), PARAMS)

        self.assertIsInstance(res, PlanningFailure)
        self.assertEqual(res.reason, FailureReason.IN_COLLISION)


class TestPlanRrtConnect(unittest.TestCase):

    def test_free_space(self):
        scene = room_scene()
        start, goal = stowed(), ready()

        traj = plan_rrt_connect(MODEL, start, goal, scene, PARAMS, np.random.default_rng(0))

        self.assertIsInstance(traj, Trajectory)
        np.testing.assert_array_equal(traj.waypoints[0], start)
        np.testing.assert_array_equal(traj.last, goal)
        self.assertEqual(trajectory_valid(MODEL, traj, scene, PARAMS, start), [])

    def test_goal_base_is_ignored(self):
        traj = plan_rrt_connect(MODEL, stowed(), ready(1.0, 1.0, 2.0), room_scene(), PARAMS,
                                np.random.default_rng(0))

        np.testing.assert_array_equal(traj.last[:3], stowed()[:3])

    def test_same_start_and_goal(self):
        traj = plan_rrt_connect(MODEL, stowed(), stowed(), room_scene(), PARAMS, np.random.default_rng(0))

        self.assertEqual(len(traj), 1)

    def test_same_seed_same_path(self):
        mid = 0.5 * (fk(MODEL, stowed()).ee.position + fk(MODEL, ready()).ee.position)
        scene = room_scene(Obb3(mid, np.array([0.03, 0.03, 0.03])))
        params = replace(PARAMS, max_iters=300)

        a = plan_rrt_connect(MODEL, stowed(), ready(), scene, params, np.random.default_rng(21))
        b = plan_rrt_connect(MODEL, stowed(), ready(), scene, params, np.random.default_rng(21))

        self.assertIs(type(a), type(b))
        if isinstance(a, Trajectory):
            np.testing.assert_array_equal(a.waypoints, b.waypoints)
            np.testing.assert_array_equal(a.gripper, b.gripper)
        else:
            self.assertEqual(a.reason, b.reason)

    def test_goal_in_collision(self):
        ee = fk(MODEL, ready()).ee
        box = Obb3(ee.position, np.array([0.1, 0.1, 0.1]))

        res = plan_rrt_connect(MODEL, stowed(), ready(), room_scene(box), PARAMS, np.random.default_rng(0))

        self.assertIsInstance(res, PlanningFailure)
        self.assertEqual(res.reason, FailureReason.IN_COLLISION)


class TestPlanBase(unittest.TestCase):

    def test_drive_and_turn(self):
        scene = room_scene()
        start = stowed(4.0, 5.0, 0.0)

        traj = plan_base(MODEL, start, (5.0, 5.0, math.pi / 2), scene, PARAMS)

        self.assertIsInstance(traj, Trajectory)
        np.testing.assert_allclose(traj.last[:3], [5.0, 5.0, math.pi / 2], atol=1e-12)
        np.testing.assert_array_equal(traj.waypoints[:, 3:], np.tile(start[3:], (len(traj), 1)))
        self.assertEqual(trajectory_valid(MODEL, traj, scene, PARAMS, start), [])

    def test_turn_in_place(self):
        traj = plan_base(MODEL, stowed(), (5.0, 5.0, 0.5), room_scene(), PARAMS)

        np.testing.assert_allclose(traj.waypoints[:, :2], 5.0)
        self.assertAlmostEqual(traj.last[2], 0.5)

    def test_already_there(self):
        self.assertEqual(len(plan_base(MODEL, stowed(), (5.0, 5.0, 0.0), room_scene(), PARAMS)), 1)

    def test_blocked(self):
        wall = Obb3(np.array([5.0, 5.0, 1.0]), np.array([0.1, 2.0, 1.0]))

        res = plan_base(MODEL, stowed(3.5, 5.0), (6.5, 5.0, 0.0), room_scene(wall), PARAMS)

        self.assertIsInstance(res, PlanningFailure)
        self.assertEqual(res.reason, FailureReason.IN_COLLISION)


class TestAnchors(unittest.TestCase):

    def test_resolve_pick_template(self):
        item = Pose3.from_xyz_yaw(4.0, 3.0, 1.0, 0.0)

        anchors = resolve_anchors(load_anchor_template("pick"), {"item": item}, MODEL)

        self.assertEqual(anchors[0].kind, AnchorKind.BASE_GOAL)
        np.testing.assert_allclose(anchors[0].value, (4.0, 3.95, -math.pi / 2), atol=1e-12)
        np.testing.assert_array_equal(anchors[1].value, MODEL.ready)
        pre_grasp = [a for a in anchors if a.label == "pre_grasp"][0]
        np.testing.assert_allclose(pre_grasp.value.position, [4.0, 3.15, 1.0], atol=1e-12)

    def test_missing_frame(self):
        with self.assertRaises(KeyError):
            resolve_anchors(load_anchor_template("pick"), {}, MODEL)

    def test_named_config_needs_model(self):
        with self.assertRaises(ValueError):
            resolve_anchors(load_anchor_template("pick"), {"item": Pose3()})

    def test_unknown_template(self):
        with self.assertRaises(FileNotFoundError):
            load_anchor_template("juggle")

    def test_negative_noise(self):
        with self.assertRaises(ValueError):
            AnchorPose(AnchorKind.BASE_GOAL, (0, 0, 0), {"xy": -0.1})

    def test_randomized_within_noise(self):
        anchor = AnchorPose(AnchorKind.BASE_GOAL, (1.0, 2.0, 0.0), {"xy": 0.05, "yaw": 0.1})
        rng = np.random.default_rng(0)
        for _ in range(50):
            x, y, yaw = anchor.randomized(rng).value
            self.assertLessEqual(abs(x - 1.0), 0.05)
            self.assertLessEqual(abs(y - 2.0), 0.05)
            self.assertLessEqual(abs(yaw), 0.1 + 1e-12)


class TestPlanAnchors(unittest.TestCase):

    def test_sequence(self):
        scene = room_scene()
        start = stowed(2.0, 2.0, 0.0)
        anchors = [
            AnchorPose(AnchorKind.CONFIG_GOAL, MODEL.ready, label="ready"),
            AnchorPose(AnchorKind.GRIPPER, "close", label="close"),
            AnchorPose(AnchorKind.BASE_GOAL, (3.0, 2.0, 0.0), label="move"),
        ]

        traj = plan_anchors(MODEL, start, anchors, scene, PARAMS, np.random.default_rng(0))

        self.assertIsInstance(traj, Trajectory)
        self.assertEqual([s.method for s in traj.segments], ["rrt_connect", "gripper", "rrt_connect", "base_heuristic"])
        np.testing.assert_array_equal(traj.waypoints[0], start)
        np.testing.assert_allclose(traj.last[:3], [3.0, 2.0, 0.0], atol=1e-12)
        np.testing.assert_array_equal(traj.last[3:], MODEL.stow)
        self.assertEqual(traj.gripper[0], 1.0)
        self.assertEqual(traj.gripper[-1], -1.0)
        self.assertEqual(trajectory_valid(MODEL, traj, scene, PARAMS, start), [])

    def test_consecutive_gripper_commands(self):
        anchors = [AnchorPose(AnchorKind.GRIPPER, "close"), AnchorPose(AnchorKind.GRIPPER, "open")]

        traj = plan_anchors(MODEL, stowed(), anchors, room_scene(), PARAMS, np.random.default_rng(0))

        np.testing.assert_array_equal(traj.gripper, [-1.0, 1.0])
        np.testing.assert_array_equal(traj.waypoints[0], traj.waypoints[1])

    def test_failure_names_segment(self):
        wall = Obb3(np.array([5.0, 5.0, 1.0]), np.array([0.1, 2.0, 1.0]))
        anchors = [AnchorPose(AnchorKind.GRIPPER, "open"),
                   AnchorPose(AnchorKind.BASE_GOAL, (6.5, 5.0, 0.0), label="drive")]

        res = plan_anchors(MODEL, stowed(3.5, 5.0), anchors, room_scene(wall), PARAMS, np.random.default_rng(0))

        self.assertIsInstance(res, PlanningFailure)
        self.assertEqual(res.segment_index, 1)
        self.assertIn("segment 1", str(res))

    def test_no_anchors(self):
        with self.assertRaises(ValueError):
            plan_anchors(MODEL, stowed(), [], room_scene(), PARAMS, np.random.default_rng(0))


class TestAudit(unittest.TestCase):

    def test_jump_reported(self):
        traj = Trajectory(np.array([stowed(), stowed(6.0, 5.0)]), np.ones(2))

        problems = trajectory_valid(MODEL, traj, room_scene(), PARAMS)

        self.assertTrue(any("densification bound" in p for p in problems))

    def test_wrong_start_reported(self):
        traj = Trajectory.single(stowed())

        problems = trajectory_valid(MODEL, traj, room_scene(), PARAMS, q_start=stowed(4.0, 4.0))

        self.assertIn("first waypoint differs from the start configuration", problems)

    def test_records(self):
        traj = plan_base(MODEL, stowed(), (5.1, 5.0, 0.0), room_scene(), PARAMS)

        records = trajectory_records(traj)

        self.assertEqual(len(records), len(traj))
        self.assertAlmostEqual(records[1]["t"], PARAMS.dt)
        self.assertEqual(len(records[0]["config"]), 11)
        self.assertEqual(records[0]["gripper"], 1.0)


if __name__ == "__main__":
    unittest.main()
