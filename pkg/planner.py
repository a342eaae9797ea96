"""
Trajectory generation over anchor poses.

A task is a sequence of anchors (base goals, ee goals, joint-space goals and
gripper commands). Segments between anchors are planned one after another:
ee goals first try a screw-motion Cartesian path tracked by IK and fall back
to RRT-Connect; base goals use a rotate-translate-rotate drive with the arm
stowed. If any segment fails both ways the whole attempt fails and the
caller resets the episode.

Collision geometry is spheres on the robot against yaw-only boxes in the
scene. Self-collision and the grasped object are not modelled.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from geometry import (
    Obb3, Pose3, point_in_polygon, polygon_boundary_distance, spheres_boxes_clearance, wrap_angle,
)
from kinematics import (
    BASE, MANIP, N_CONFIG, _chain, clip_manip, fk, se3_exp, se3_log, solve_ik, track, within_limits,
    world_spheres,
)
from layout import FixtureKind

logger = logging.getLogger("darkstore.planner")

ANCHOR_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", "anchor_templates")


# ===== RESULT TYPES =====

class FailureReason(Enum):
    IK_DIVERGED = "ik_diverged"
    IN_COLLISION = "in_collision"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class PlanningFailure:
    reason: FailureReason
    segment_index: int | None = None
    reasons: tuple = ()

    def __str__(self):
        extra = f" (attempts: {', '.join(r.value for r in self.reasons)})" if self.reasons else ""
        where = f" at segment {self.segment_index}" if self.segment_index is not None else ""
        return f"{self.reason.value}{where}{extra}"


@dataclass
class Segment:
    anchor_index: int
    method: str
    status: str
    start: int
    end: int


@dataclass(eq=False)
class Trajectory:
    """waypoints (N, 11); gripper[i] is the command in effect from waypoint i (+1 open, -1 closed)."""
    waypoints: np.ndarray
    gripper: np.ndarray
    dt: float = 0.1
    segments: list = field(default_factory=list)

    @classmethod
    def single(cls, q, gripper=1.0, dt=0.1):
        return cls(np.asarray(q, dtype=float).reshape(1, N_CONFIG), np.array([float(gripper)]), dt)

    def __len__(self):
        return len(self.waypoints)

    @property
    def last(self):
        return self.waypoints[-1]


@dataclass(frozen=True)
class PlannerParams:
    dq_rot: float = 0.02
    dq_lin: float = 0.01
    rrt_eta: float = 0.15
    max_iters: int = 5000
    margin: float = 0.005
    damping: float = 0.05
    ik_iters: int = 50
    ik_solve_iters: int = 200
    ik_restarts: int = 10
    pos_tol: float = 1e-4
    rot_tol: float = math.radians(0.5)
    screw_lin_step: float = 0.01
    screw_rot_step: float = math.radians(2.0)
    shortcut_attempts: int = 100
    check_fraction: float = 0.1
    dt: float = 0.1
    cull_radius: float = 2.0

    def step_vector(self):
        """Per-coordinate densification bound: metres for x, y, torso; radians otherwise."""
        steps = np.full(N_CONFIG, self.dq_rot)
        steps[[0, 1, 3]] = self.dq_lin
        return steps


# ===== SCENE =====

@dataclass(frozen=True, eq=False)
class SceneObstacles:
    static: tuple = ()
    dynamic: tuple = ()
    walls: object = None
    margin: float = 0.005

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError(f"inflation margin must be non-negative, got {self.margin}")
        boxes = list(self.static) + list(self.dynamic)
        object.__setattr__(self, "_centers", np.array([b.center for b in boxes]).reshape(-1, 3))
        object.__setattr__(self, "_half", np.array([b.half_extents for b in boxes]).reshape(-1, 3))
        object.__setattr__(self, "_yaws", np.array([b.yaw for b in boxes]).reshape(-1))

    @property
    def boxes(self):
        return list(self.static) + list(self.dynamic)

    def __len__(self):
        return len(self.static) + len(self.dynamic)

    def arrays(self):
        return self._centers, self._half, self._yaws

    def near(self, point, radius):
        """Boxes whose footprint may come within radius of point (xy)."""
        p = np.asarray(point, dtype=float)[:2]

        def keep(box):
            reach = float(np.hypot(box.half_extents[0], box.half_extents[1]))
            return float(np.linalg.norm(box.center[:2] - p)) <= radius + reach

        return SceneObstacles(tuple(b for b in self.static if keep(b)),
                              tuple(b for b in self.dynamic if keep(b)), self.walls, self.margin)

    def without(self, labels):
        labels = set(labels)
        return SceneObstacles(tuple(b for b in self.static if b.label not in labels),
                              tuple(b for b in self.dynamic if b.label not in labels), self.walls, self.margin)


PANEL = 0.02
WALL_THICKNESS = 0.1
WALL_HEIGHT = 2.5


def _local_box(placement, center, half, label):
    c, s = math.cos(placement.yaw), math.sin(placement.yaw)
    x = placement.center[0] + c * center[0] - s * center[1]
    y = placement.center[1] + s * center[0] + c * center[1]
    return Obb3(np.array([x, y, center[2]]), np.array(half), placement.yaw, label)


def fixture_boxes(placement, template):
    """Boards as slabs, side and back panels (and a roof for cold fixtures), or one solid block."""
    hx, hy = template.half_extents
    h = template.height
    if not template.boards:
        return [_local_box(placement, (0.0, 0.0, 0.5 * h), (hx, hy, 0.5 * h), f"{placement.id}/body")]
    boxes = []
    for b in template.boards:
        x0, y0, x1, y1 = b.rect
        boxes.append(_local_box(placement, (0.5 * (x0 + x1), 0.5 * (y0 + y1), b.z - 0.5 * b.thickness),
                                (0.5 * (x1 - x0), 0.5 * (y1 - y0), 0.5 * b.thickness),
                                f"{placement.id}/board_{b.index}"))
    side = (0.5 * PANEL, hy, 0.5 * h)
    boxes.append(_local_box(placement, (-hx + 0.5 * PANEL, 0.0, 0.5 * h), side, f"{placement.id}/side_l"))
    boxes.append(_local_box(placement, (hx - 0.5 * PANEL, 0.0, 0.5 * h), side, f"{placement.id}/side_r"))
    boxes.append(_local_box(placement, (0.0, -hy + 0.5 * PANEL, 0.5 * h), (hx, 0.5 * PANEL, 0.5 * h),
                            f"{placement.id}/back"))
    if template.kind in (FixtureKind.FRIDGE, FixtureKind.SHOWCASE):
        boxes.append(_local_box(placement, (0.0, 0.0, h - 0.5 * PANEL), (hx, hy, 0.5 * PANEL),
                                f"{placement.id}/roof"))
    return boxes


def wall_boxes(walls):
    """Thin tall boxes just outside every wall edge of a CCW polygon."""
    boxes = []
    for k, (p, q) in enumerate(walls.edges()):
        d = q - p
        length = float(np.linalg.norm(d))
        yaw = math.atan2(d[1], d[0])
        outward = np.array([d[1], -d[0]]) / length
        mid = 0.5 * (p + q) + 0.5 * WALL_THICKNESS * outward
        boxes.append(Obb3(np.array([mid[0], mid[1], 0.5 * WALL_HEIGHT]),
                          np.array([0.5 * length + WALL_THICKNESS, 0.5 * WALL_THICKNESS, 0.5 * WALL_HEIGHT]),
                          yaw, f"wall_{k}"))
    return boxes


def item_box(item, product):
    x, y, z = item.pose.position
    dx, dy, dz = product.dims
    return Obb3(np.array([x, y, z]), np.array([0.5 * dx, 0.5 * dy, 0.5 * dz]), item.pose.yaw(), item.id)


def store_obstacles(layout, arrangement=None, exclude_items=(), margin=0.005):
    """Fixtures and walls as static boxes, arranged items as dynamic boxes."""
    static = []
    for p in layout.placements:
        static.extend(fixture_boxes(p, layout.template_of(p)))
    static.extend(wall_boxes(layout.store.walls))
    dynamic = []
    if arrangement is not None:
        skip = set(exclude_items)
        dynamic = [item_box(it, arrangement.products[it.product_id]) for it in arrangement.items
                   if it.id not in skip]
    return SceneObstacles(tuple(static), tuple(dynamic), layout.store.walls, margin)


# ===== COLLISION =====

def _base_outside(model, q, scene):
    if scene.walls is None:
        return False
    xy = np.asarray(q[:2], dtype=float)
    if not point_in_polygon(xy, scene.walls):
        return True
    return float(polygon_boundary_distance(xy[None, :], scene.walls)[0]) < model.base_radius


def config_in_collision(model, q, scene):
    """Any robot sphere closer than the margin to a scene box, or the base leaving the store."""
    q = np.asarray(q, dtype=float)
    if _base_outside(model, q, scene):
        return True
    if len(scene) == 0:
        return False
    centers, radii = world_spheres(model, _chain(model, q))
    if len(radii) == 0:
        return False
    clearance = spheres_boxes_clearance(centers, radii, *scene.arrays())
    return bool(np.min(clearance) < scene.margin)


def _delta(a, b):
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    d[2] = wrap_angle(d[2])
    return d


def _interpolate(a, d, t):
    q = a + t * d
    q[2] = wrap_angle(q[2])
    return q


def densify(path, steps):
    """Insert linear waypoints so consecutive configs differ by at most steps per coordinate."""
    path = [np.asarray(q, dtype=float) for q in path]
    out = [path[0].copy()]
    for a, b in zip(path, path[1:]):
        d = _delta(a, b)
        n = max(1, int(math.ceil(float(np.max(np.abs(d) / steps)) - 1e-12)))
        for k in range(1, n + 1):
            out.append(_interpolate(a, d, k / n) if k < n else np.asarray(b, dtype=float).copy())
    return out


def _edge_free(model, a, b, scene, fine_steps):
    """Collision check of the straight motion a -> b at the fine resolution (a excluded)."""
    d = _delta(a, b)
    n = max(1, int(math.ceil(float(np.max(np.abs(d) / fine_steps)) - 1e-12)))
    for k in range(1, n + 1):
        if config_in_collision(model, _interpolate(a, d, k / n), scene):
            return False
    return True


def motion_free(model, a, b, scene, params):
    """Densify a -> b at δq and check every dense edge at δq * check_fraction."""
    steps = params.step_vector()
    fine = steps * params.check_fraction
    dense = densify([a, b], steps)
    return all(_edge_free(model, p, q, scene, fine) for p, q in zip(dense, dense[1:]))


def path_free(model, dense, scene, params):
    fine = params.step_vector() * params.check_fraction
    if config_in_collision(model, dense[0], scene):
        return False
    return all(_edge_free(model, p, q, scene, fine) for p, q in zip(dense, dense[1:]))


# ===== SCREW MOTION =====

def screw_interp(pose_a, pose_b, n):
    """n poses along the constant-twist geodesic from pose_a to pose_b, endpoints exact."""
    if n < 2:
        raise ValueError(f"screw interpolation needs n >= 2, got {n}")
    xi = se3_log(pose_a.inverse().compose(pose_b))
    poses = [pose_a]
    for i in range(1, n - 1):
        poses.append(pose_a.compose(se3_exp(xi * (i / (n - 1)))))
    poses.append(pose_b)
    return poses


def plan_screw(model, q_start, ee_goal, scene, params, gripper=1.0):
    """Screw path of the ee tracked by IK, densified and collision-checked as a whole."""
    q_start = np.asarray(q_start, dtype=float)
    start_ee = fk(model, q_start).ee
    dist = float(np.linalg.norm(ee_goal.position - start_ee.position))
    angle = start_ee.angle_to(ee_goal)
    n_steps = int(math.ceil(max(dist / params.screw_lin_step, angle / params.screw_rot_step) - 1e-12))
    if n_steps <= 0:
        return Trajectory.single(q_start, gripper, params.dt)

    poses = screw_interp(start_ee, ee_goal, n_steps + 1)[1:]
    q = q_start
    path = [q_start]
    for pose in poses:
        q, ok = track(model, q, pose, params.ik_iters, params.pos_tol, params.rot_tol, params.damping)
        if not ok:
            logger.debug("Screw tracking diverged")
            return PlanningFailure(FailureReason.IK_DIVERGED)
        path.append(q)

    dense = densify(path, params.step_vector())
    if not path_free(model, dense, scene, params):
        logger.debug("Screw path in collision")
        return PlanningFailure(FailureReason.IN_COLLISION)
    return Trajectory(np.array(dense), np.full(len(dense), float(gripper)), params.dt)


# ===== RRT-CONNECT =====

class _Tree:
    def __init__(self, root, scale):
        self.nodes = np.zeros((64, 8))
        self.parents = [-1]
        self.nodes[0] = root
        self.size = 1
        self.scale = scale

    def add(self, q, parent):
        if self.size == len(self.nodes):
            self.nodes = np.vstack([self.nodes, np.zeros_like(self.nodes)])
        self.nodes[self.size] = q
        self.parents.append(parent)
        self.size += 1
        return self.size - 1

    def nearest(self, q):
        d = (self.nodes[:self.size] - q) * self.scale
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))

    def path_to(self, i):
        out = []
        while i >= 0:
            out.append(self.nodes[i].copy())
            i = self.parents[i]
        return out[::-1]


def plan_rrt_connect(model, q_start, q_goal, scene, params, rng, gripper=1.0):
    """
    Bidirectional RRT in the 8-D torso+arm space with the base frozen at
    q_start's base. The direct connection is tried first; found paths are
    shortcut-smoothed and densified.
    """
    q_start = np.asarray(q_start, dtype=float)
    base = q_start[BASE].copy()
    goal = q_start.copy()
    goal[MANIP] = np.asarray(q_goal, dtype=float)[MANIP]

    if np.array_equal(goal, q_start):
        return Trajectory.single(q_start, gripper, params.dt)
    if config_in_collision(model, q_start, scene) or config_in_collision(model, goal, scene):
        return PlanningFailure(FailureReason.IN_COLLISION)

    def full(m):
        q = np.empty(N_CONFIG)
        q[BASE] = base
        q[MANIP] = m
        return q

    steps = params.step_vector()
    scale = params.dq_rot / steps[MANIP]

    def finish(manip_path):
        path = [full(m) for m in manip_path]
        path[0] = q_start.copy()
        path[-1] = goal.copy()
        for _ in range(params.shortcut_attempts):
            if len(path) < 3:
                break
            i, j = sorted(rng.choice(len(path), size=2, replace=False))
            if j - i < 2:
                continue
            if motion_free(model, path[i], path[j], scene, params):
                path = path[:i + 1] + path[j:]
        dense = densify(path, steps)
        return Trajectory(np.array(dense), np.full(len(dense), float(gripper)), params.dt)

    if motion_free(model, q_start, goal, scene, params):
        return finish([q_start[MANIP], goal[MANIP]])

    lo, hi = model.manip_lower, model.manip_upper
    tree_a = _Tree(q_start[MANIP], scale)
    tree_b = _Tree(goal[MANIP], scale)
    eta = params.rrt_eta

    def extend(tree, target):
        i = tree.nearest(target)
        src = tree.nodes[i]
        d = (target - src) * scale
        dist = float(np.linalg.norm(d))
        reached = dist <= eta
        new = target.copy() if reached else src + (target - src) * (eta / dist)
        if not motion_free(model, full(src), full(new), scene, params):
            return None, False
        return tree.add(new, i), reached

    for it in range(params.max_iters):
        sample = rng.uniform(lo, hi)
        idx, _ = extend(tree_a, sample)
        if idx is not None:
            target = tree_a.nodes[idx].copy()
            while True:
                j, reached = extend(tree_b, target)
                if j is None:
                    break
                if reached:
                    pa = tree_a.path_to(idx)
                    pb = tree_b.path_to(j)[::-1]
                    manip_path = pa + pb[1:]
                    if not np.array_equal(tree_a.nodes[0], q_start[MANIP]):
                        manip_path = manip_path[::-1]
                    logger.debug(f"RRT-Connect joined trees after {it + 1} iterations")
                    return finish(manip_path)
        tree_a, tree_b = tree_b, tree_a

    logger.debug(f"RRT-Connect timed out after {params.max_iters} iterations")
    return PlanningFailure(FailureReason.TIMEOUT)


# ===== BASE MOTION =====

def plan_base(model, q_start, base_goal, scene, params, gripper=1.0):
    """
    Turn toward the goal position, drive straight, turn to the goal yaw.
    The arm keeps q_start's joint values (callers stow it beforehand).
    """
    q_start = np.asarray(q_start, dtype=float)
    x0, y0, yaw0 = q_start[BASE]
    gx, gy, gyaw = float(base_goal[0]), float(base_goal[1]), wrap_angle(float(base_goal[2]))
    dist = math.hypot(gx - x0, gy - y0)
    if dist < 1e-9 and abs(wrap_angle(gyaw - yaw0)) < 1e-9:
        return Trajectory.single(q_start, gripper, params.dt)

    keys = [q_start]
    if dist >= 1e-9:
        heading = math.atan2(gy - y0, gx - x0)
        turned = q_start.copy()
        turned[2] = heading
        driven = turned.copy()
        driven[0], driven[1] = gx, gy
        keys += [turned, driven]
    final = keys[-1].copy()
    final[2] = gyaw
    keys.append(final)

    dense = densify(keys, params.step_vector())
    if not path_free(model, dense, scene, params):
        logger.debug("Base drive blocked")
        return PlanningFailure(FailureReason.IN_COLLISION)
    return Trajectory(np.array(dense), np.full(len(dense), float(gripper)), params.dt)


# ===== ANCHORS =====

class AnchorKind(Enum):
    BASE_GOAL = "base_goal"
    EE_GOAL = "ee_goal"
    CONFIG_GOAL = "config_goal"
    GRIPPER = "gripper"


@dataclass(frozen=True, eq=False)
class AnchorPose:
    """
    value: (x, y, yaw) for base goals, Pose3 for ee goals, an 8-vector of
    torso+arm values for config goals, 'open'/'close' for the gripper.
    noise: uniform half-widths, keys xy/yaw (base), xyz/yaw (ee), joints (config).
    """
    kind: AnchorKind
    value: object
    noise: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if any(v < 0 for v in self.noise.values()):
            raise ValueError(f"anchor {self.label}: noise must be non-negative")

    def randomized(self, rng):
        if not self.noise:
            return self
        n = self.noise
        if self.kind == AnchorKind.BASE_GOAL:
            x, y, yaw = self.value
            dx, dy = rng.uniform(-n.get("xy", 0.0), n.get("xy", 0.0), 2)
            dyaw = rng.uniform(-n.get("yaw", 0.0), n.get("yaw", 0.0))
            return AnchorPose(self.kind, (x + dx, y + dy, wrap_angle(yaw + dyaw)), {}, self.label)
        if self.kind == AnchorKind.EE_GOAL:
            d = rng.uniform(-n.get("xyz", 0.0), n.get("xyz", 0.0), 3)
            dyaw = rng.uniform(-n.get("yaw", 0.0), n.get("yaw", 0.0))
            pose = Pose3.from_xyz_yaw(*(self.value.position + d), 0.0).compose(
                Pose3.from_xyz_yaw(0.0, 0.0, 0.0, dyaw)).compose(Pose3(np.zeros(3), self.value.orientation))
            return AnchorPose(self.kind, pose, {}, self.label)
        if self.kind == AnchorKind.CONFIG_GOAL:
            j = n.get("joints", 0.0)
            return AnchorPose(self.kind, np.asarray(self.value) + rng.uniform(-j, j, 8), {}, self.label)
        return self


def load_anchor_template(name_or_path):
    """A bundled template name ('pick', 'open_door', ...) or a JSON file path."""
    path = name_or_path
    if not os.path.isfile(path):
        path = os.path.join(ANCHOR_DIR, f"{name_or_path}.json")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"anchor template '{name_or_path}' not found")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _frame(frames, name, label):
    try:
        return frames[name]
    except KeyError:
        raise KeyError(f"anchor '{label}' needs frame '{name}', available: {sorted(frames)}") from None


def resolve_anchors(template, frames, model=None):
    """Turn template entries into AnchorPoses using named frames (Pose3 values)."""
    anchors = []
    for k, entry in enumerate(template["anchors"]):
        kind = AnchorKind(entry["kind"])
        label = entry.get("label", f"{template.get('name', 'anchor')}[{k}]")
        noise = dict(entry.get("noise", {}))
        if kind == AnchorKind.GRIPPER:
            anchors.append(AnchorPose(kind, entry["action"], {}, label))
        elif kind == AnchorKind.CONFIG_GOAL:
            cfg = entry["config"]
            if isinstance(cfg, str):
                if model is None:
                    raise ValueError(f"anchor '{label}' names config '{cfg}' but no robot model was given")
                cfg = getattr(model, cfg)
            anchors.append(AnchorPose(kind, np.asarray(cfg, dtype=float), noise, label))
        else:
            frame = _frame(frames, entry["frame"], label)
            xyz = entry.get("xyz", [0.0, 0.0, 0.0])
            if kind == AnchorKind.BASE_GOAL:
                pose = frame.compose(Pose3.from_xyz_yaw(xyz[0], xyz[1], 0.0, entry.get("yaw", 0.0)))
                anchors.append(AnchorPose(kind, (float(pose.position[0]), float(pose.position[1]), pose.yaw()),
                                          noise, label))
            else:
                pose = frame.compose(Pose3.from_xyz_rpy(xyz, entry.get("rpy", [0.0, 0.0, 0.0])))
                anchors.append(AnchorPose(kind, pose, noise, label))
    return anchors


class _Builder:
    def __init__(self, q_start, gripper, dt):
        self.waypoints = [np.asarray(q_start, dtype=float).copy()]
        self.gripper = [gripper]
        self.segments = []
        self.dt = dt
        self.flag_fresh = False

    @property
    def current(self):
        return self.waypoints[-1]

    def append(self, traj, anchor_index, method):
        start = len(self.waypoints) - 1
        flag = self.gripper[-1]
        for q in traj.waypoints[1:]:
            self.waypoints.append(q.copy())
            self.gripper.append(flag)
        if len(traj.waypoints) > 1:
            self.flag_fresh = False
        self.segments.append(Segment(anchor_index, method, "ok", start, len(self.waypoints) - 1))

    def command(self, flag, anchor_index):
        if self.flag_fresh:
            self.waypoints.append(self.current.copy())
            self.gripper.append(flag)
        else:
            self.gripper[-1] = flag
        self.flag_fresh = True
        idx = len(self.waypoints) - 1
        self.segments.append(Segment(anchor_index, "gripper", "ok", idx, idx))

    def build(self):
        return Trajectory(np.array(self.waypoints), np.array(self.gripper, dtype=float), self.dt, self.segments)


def plan_anchors(model, q_start, anchors, scene, params, rng, gripper="open"):
    """
    Plan every segment in order. Returns the concatenated Trajectory, or a
    PlanningFailure naming the failing segment; never a partial trajectory.
    """
    if not anchors:
        raise ValueError("plan_anchors needs at least one anchor")
    anchors = [a.randomized(rng) for a in anchors]
    flag = 1.0 if gripper == "open" else -1.0
    out = _Builder(q_start, flag, params.dt)

    for k, anchor in enumerate(anchors):
        q = out.current
        flag = out.gripper[-1]
        if anchor.kind == AnchorKind.GRIPPER:
            out.command(1.0 if anchor.value == "open" else -1.0, k)
            continue

        if anchor.kind == AnchorKind.BASE_GOAL:
            if not np.allclose(q[MANIP], model.stow, atol=1e-12):
                stowed = q.copy()
                stowed[MANIP] = model.stow
                res = plan_rrt_connect(model, q, stowed, scene.near(q[:2], params.cull_radius), params, rng, flag)
                if isinstance(res, PlanningFailure):
                    logger.info(f"Stowing before '{anchor.label}' failed: {res.reason.value}")
                    return PlanningFailure(res.reason, k, (res.reason,))
                out.append(res, k, "rrt_connect")
                q = out.current
            res = plan_base(model, q, anchor.value, scene, params, flag)
            if isinstance(res, PlanningFailure):
                logger.info(f"Base segment '{anchor.label}' failed: {res.reason.value}")
                return PlanningFailure(res.reason, k, (res.reason,))
            out.append(res, k, "base_heuristic")
            continue

        local = scene.near(q[:2], params.cull_radius)
        if anchor.kind == AnchorKind.CONFIG_GOAL:
            goal = q.copy()
            goal[MANIP] = clip_manip(model, anchor.value)
            res = plan_rrt_connect(model, q, goal, local, params, rng, flag)
            if isinstance(res, PlanningFailure):
                logger.info(f"Joint-space segment '{anchor.label}' failed: {res.reason.value}")
                return PlanningFailure(res.reason, k, (res.reason,))
            out.append(res, k, "rrt_connect")
            continue

        screw = plan_screw(model, q, anchor.value, local, params, flag)
        if not isinstance(screw, PlanningFailure):
            out.append(screw, k, "screw")
            continue
        q_goal = solve_ik(model, q, anchor.value, params, rng,
                          accept=lambda c: not config_in_collision(model, c, local))
        if q_goal is None:
            logger.info(f"Segment '{anchor.label}' failed: screw {screw.reason.value}, no IK goal")
            return PlanningFailure(FailureReason.IK_DIVERGED, k, (screw.reason, FailureReason.IK_DIVERGED))
        rrt = plan_rrt_connect(model, q, q_goal, local, params, rng, flag)
        if isinstance(rrt, PlanningFailure):
            logger.info(f"Segment '{anchor.label}' failed: screw {screw.reason.value}, rrt {rrt.reason.value}")
            return PlanningFailure(rrt.reason, k, (screw.reason, rrt.reason))
        out.append(rrt, k, "rrt_connect")

    traj = out.build()
    logger.info(f"Planned {len(anchors)} anchors: {len(traj)} waypoints "
                f"({', '.join(s.method for s in traj.segments)})")
    return traj


# ===== AUDIT AND EXPORT =====

def trajectory_valid(model, traj, scene, params, q_start=None):
    """Independent audit: limits, step bound, dense collision recheck, first waypoint."""
    problems = []
    wps = traj.waypoints
    if q_start is not None and not np.array_equal(wps[0], np.asarray(q_start, dtype=float)):
        problems.append("first waypoint differs from the start configuration")
    steps = params.step_vector()
    fine = steps * params.check_fraction
    for i, q in enumerate(wps):
        if not within_limits(model, q):
            problems.append(f"waypoint {i} outside joint limits")
    if config_in_collision(model, wps[0], scene):
        problems.append("waypoint 0 in collision")
    for i in range(1, len(wps)):
        d = np.abs(_delta(wps[i - 1], wps[i]))
        if np.any(d > steps + 1e-9):
            problems.append(f"step {i - 1}->{i} exceeds the densification bound")
        if not _edge_free(model, wps[i - 1], wps[i], scene, fine):
            problems.append(f"motion {i - 1}->{i} in collision")
    return problems


def trajectory_records(traj):
    """Line records {t, config, gripper, method} for the trajectory log."""
    methods = [""] * len(traj)
    for seg in traj.segments:
        for i in range(seg.start, seg.end + 1):
            if not methods[i] or seg.start != seg.end:
                methods[i] = seg.method
    return [{"t": i * traj.dt, "config": [float(v) for v in q], "gripper": float(g), "method": methods[i]}
            for i, (q, g) in enumerate(zip(traj.waypoints, traj.gripper))]
