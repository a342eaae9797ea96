"""
Success judging for the benchmark tasks.

A task is judged on a pair of scene snapshots (before and after execution).
Pick tasks succeed when any item of the target product reaches the target
region, door tasks when the door angle passes the threshold. Every task also
requires that no other item was moved and that the robot has come to rest.
Composite tasks are judged subtask by subtask on intermediate snapshots.

This module also holds the evaluation scenarios (which randomization axes
vary per trial), the per-task item split, trial setup on a generated scene and
a kinematic replay that turns a planned trajectory into an after-snapshot.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

import seeding
from geometry import Obb3, Pose3
from kinematics import fk
from layout import FixtureKind

logger = logging.getLogger("darkstore.task_eval")

ORDINALS = ("first", "second", "third", "fourth", "fifth", "sixth")
MAX_DOOR_ANGLE = math.radians(110.0)


class StateMismatchError(ValueError):
    """Raised when snapshots, task and arrangement do not describe the same scene."""
    pass


class TrialSetupError(RuntimeError):
    """Raised when a scene offers nothing the requested task can be set up on."""
    pass


# ===== TYPES =====

class TaskKind(Enum):
    PICK_TO_BASKET = "pick_to_basket"
    PICK_FROM_FLOOR = "pick_from_floor"
    BOARD_TO_BOARD = "board_to_board"
    OPEN_DOOR = "open_door"
    CLOSE_DOOR = "close_door"
    COMPOSITE = "composite"


PICK_KINDS = (TaskKind.PICK_TO_BASKET, TaskKind.PICK_FROM_FLOOR, TaskKind.BOARD_TO_BOARD)
DOOR_KINDS = (TaskKind.OPEN_DOOR, TaskKind.CLOSE_DOOR)


class Criterion(Enum):
    TARGET_NOT_PLACED = "target_not_placed"
    ITEMS_DISTURBED = "items_disturbed"
    ROBOT_MOVING = "robot_moving"
    DOOR_ANGLE = "door_angle"
    SUBTASK = "subtask"


@dataclass(frozen=True)
class Tolerances:
    disturb_pos: float = 0.01
    disturb_rot: float = math.radians(5.0)
    static_vel: float = 1e-2
    open_angle: float = math.radians(60.0)
    closed_angle: float = math.radians(5.0)
    proximity: float = 0.3

    def __post_init__(self):
        for name in ("disturb_pos", "disturb_rot", "static_vel", "open_angle", "closed_angle", "proximity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class TaskSpec:
    """
    target: destination fixture id for board/floor tasks, door id
    (<fixture>/door_<k>) for door tasks. target_items are the instances the
    task is allowed to move.
    """
    kind: TaskKind
    product_id: str | None = None
    target: str | None = None
    board_index: int | None = None
    target_items: tuple = ()
    subtasks: tuple = ()
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if self.kind == TaskKind.COMPOSITE:
            if not self.subtasks:
                raise ValueError("composite task needs at least one subtask")
            return
        if self.kind in PICK_KINDS and not self.product_id:
            raise ValueError(f"{self.kind.value} needs a target product")
        if self.kind in (TaskKind.PICK_FROM_FLOOR, TaskKind.BOARD_TO_BOARD):
            if self.target is None or self.board_index is None:
                raise ValueError(f"{self.kind.value} needs a destination fixture and board")
        if self.kind in DOOR_KINDS and not self.target:
            raise ValueError(f"{self.kind.value} needs a door id")

    def to_dict(self):
        d = {"kind": self.kind.value}
        if self.kind == TaskKind.COMPOSITE:
            d["subtasks"] = [s.to_dict() for s in self.subtasks]
            return d
        for key in ("product_id", "target", "board_index"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        if self.target_items:
            d["target_items"] = list(self.target_items)
        return d

    @classmethod
    def from_dict(cls, d, tolerances=None):
        tol = tolerances or Tolerances()
        kind = TaskKind(d["kind"])
        if kind == TaskKind.COMPOSITE:
            return cls(kind, subtasks=tuple(cls.from_dict(s, tol) for s in d["subtasks"]), tolerances=tol)
        return cls(kind, d.get("product_id"), d.get("target"), d.get("board_index"),
                   tuple(d.get("target_items", ())), (), tol)


@dataclass(frozen=True, eq=False)
class SceneState:
    """Snapshot: item poses by instance id, robot config and velocity (11 each), door angles by door id."""
    item_poses: dict
    config: np.ndarray = field(default_factory=lambda: np.zeros(11))
    velocities: np.ndarray = field(default_factory=lambda: np.zeros(11))
    door_angles: dict = field(default_factory=dict)
    basket: Obb3 | None = None
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "config", np.asarray(self.config, dtype=float).reshape(11))
        object.__setattr__(self, "velocities", np.asarray(self.velocities, dtype=float).reshape(11))

    @classmethod
    def from_arrangement(cls, arr, config=None, door_angles=None, basket=None, time=0.0):
        return cls({it.id: it.pose for it in arr.items},
                   np.zeros(11) if config is None else config, np.zeros(11),
                   dict(door_angles or {}), basket, time)

    def with_item(self, item_id, pose):
        if item_id not in self.item_poses:
            raise StateMismatchError(f"unknown item '{item_id}'")
        poses = dict(self.item_poses)
        poses[item_id] = pose
        return replace(self, item_poses=poses)

    def with_door(self, door_id, angle):
        doors = dict(self.door_angles)
        doors[door_id] = float(angle)
        return replace(self, door_angles=doors)


@dataclass(frozen=True)
class Failure:
    criterion: Criterion
    ids: tuple = ()
    subtask: int | None = None
    detail: tuple = ()

    def describe(self):
        if self.criterion == Criterion.ITEMS_DISTURBED:
            return f"items_disturbed({', '.join(self.ids)})"
        if self.criterion == Criterion.SUBTASK:
            inner = "; ".join(f.describe() for f in self.detail)
            return f"subtask({self.subtask}: {inner})"
        return self.criterion.value


@dataclass(frozen=True)
class SuccessReport:
    success: bool
    failed: tuple = ()

    def __post_init__(self):
        if self.success != (not self.failed):
            raise ValueError("success must hold exactly when no criterion failed")

    def criteria(self):
        return [f.criterion for f in self.failed]


# ===== DOORS =====

def door_ids(layout):
    ids = []
    for p in layout.placements:
        for k in range(1, layout.template_of(p).doors + 1):
            ids.append(f"{p.id}/door_{k}")
    return ids


def _parse_door(door_id):
    fixture_id, _, name = door_id.rpartition("/")
    if not fixture_id or not name.startswith("door_"):
        raise StateMismatchError(f"malformed door id '{door_id}'")
    return fixture_id, int(name[len("door_"):])


@dataclass(frozen=True)
class DoorGeometry:
    """
    Hinged door in its fixture frame. Showcase doors swing about a vertical
    hinge at their left edge; a chest fridge lid swings up about its back edge.
    """
    fixture_pose: Pose3
    vertical: bool
    hinge: tuple
    radius: float

    def handle_pose(self, angle):
        hx, hy, hz = self.hinge
        if self.vertical:
            local = Pose3.from_xyz_yaw(hx + self.radius * math.cos(angle), hy + self.radius * math.sin(angle),
                                       hz, angle)
        else:
            local = Pose3.from_xyz_rpy([hx, hy + self.radius * math.cos(angle), hz + self.radius * math.sin(angle)],
                                       [angle, 0.0, 0.0])
        return self.fixture_pose.compose(local)

    def angle_of(self, point):
        p = self.fixture_pose.inverse().transform_points(point)[0]
        if self.vertical:
            a = math.atan2(p[1] - self.hinge[1], p[0] - self.hinge[0])
        else:
            a = math.atan2(p[2] - self.hinge[2], p[1] - self.hinge[1])
        return float(np.clip(a, 0.0, MAX_DOOR_ANGLE))


def door_geometry(layout, door_id):
    fixture_id, k = _parse_door(door_id)
    try:
        placement = layout.placement(fixture_id)
    except KeyError:
        raise StateMismatchError(f"door '{door_id}' names unknown fixture") from None
    tpl = layout.template_of(placement)
    if not 1 <= k <= tpl.doors:
        raise StateMismatchError(f"fixture {fixture_id} has {tpl.doors} doors, no door {k}")
    hx, hy = tpl.half_extents
    pose = Pose3.from_xyz_yaw(placement.center[0], placement.center[1], 0.0, placement.yaw)
    if tpl.kind == FixtureKind.FRIDGE:
        return DoorGeometry(pose, False, (0.0, -hy, tpl.height), 2.0 * hy)
    width = 2.0 * hx / tpl.doors
    return DoorGeometry(pose, True, (-hx + (k - 1) * width, hy, min(1.0, 0.5 * tpl.height)), 0.9 * width)


# ===== CRITERIA =====

def _check_ids(before, after, arrangement=None):
    if set(before.item_poses) != set(after.item_poses):
        missing = sorted(set(before.item_poses) ^ set(after.item_poses))
        raise StateMismatchError(f"snapshots disagree on item ids: {missing[:5]}")
    if arrangement is not None:
        known = {it.id for it in arrangement.items}
        unknown = sorted(set(after.item_poses) - known)
        if unknown:
            raise StateMismatchError(f"snapshot items not in the arrangement: {unknown[:5]}")


def disturbed_items(before, after, spec, exclude=()):
    """Ids moved by more than the position or rotation tolerance, ignoring the task's own items."""
    _check_ids(before, after)
    skip = set(spec.target_items) | set(exclude)
    for item_id in spec.target_items:
        if item_id not in before.item_poses:
            raise StateMismatchError(f"target item '{item_id}' is not in the snapshots")
    tol = spec.tolerances
    moved = []
    for item_id in sorted(before.item_poses):
        if item_id in skip:
            continue
        a, b = before.item_poses[item_id], after.item_poses[item_id]
        if (float(np.linalg.norm(b.position - a.position)) > tol.disturb_pos
                or a.angle_to(b) > tol.disturb_rot):
            moved.append(item_id)
    return moved


def robot_static(state, eps_v):
    return bool(np.max(np.abs(state.velocities)) <= eps_v)


def _fixture_frame(layout, fixture_id):
    p = layout.placement(fixture_id)
    return Pose3.from_xyz_yaw(p.center[0], p.center[1], 0.0, p.yaw)


def _on_board(layout, fixture_id, board_index, position):
    tpl = layout.template_of(layout.placement(fixture_id))
    if not 0 <= board_index < len(tpl.boards):
        raise StateMismatchError(f"fixture {fixture_id} has no board {board_index}")
    board = tpl.boards[board_index]
    x, y, z = _fixture_frame(layout, fixture_id).inverse().transform_points(position)[0]
    x0, y0, x1, y1 = board.rect
    top = board.z + (board.gap if board.gap is not None else tpl.height - board.z)
    return x0 <= x <= x1 and y0 <= y <= y1 and board.z <= z <= top


def _lane_distance(arrangement, lane, position):
    """Horizontal distance from a point to the lane's front-to-back segment."""
    x, y, _ = _fixture_frame(arrangement.layout, lane.fixture_id).inverse().transform_points(position)[0]
    y_lo, y_hi = min(lane.slots), max(lane.slots)
    return math.hypot(x - lane.x, y - min(max(y, y_lo), y_hi))


def near_group(arrangement, product_id, position, radius):
    return any(_lane_distance(arrangement, lane, position) <= radius
               for lane in arrangement.lanes if lane.product_id == product_id)


def _product_of(arrangement):
    return {it.id: it.product_id for it in arrangement.items}


def _placed_items(spec, after, arrangement):
    products = _product_of(arrangement)
    ids = [i for i in sorted(after.item_poses) if products.get(i) == spec.product_id]
    if spec.kind == TaskKind.PICK_TO_BASKET:
        if after.basket is None:
            raise StateMismatchError("pick_to_basket needs a basket region in the snapshot")
        return [i for i in ids if after.basket.contains(after.item_poses[i].position)]
    layout = arrangement.layout
    try:
        layout.placement(spec.target)
    except KeyError:
        raise StateMismatchError(f"unknown destination fixture '{spec.target}'") from None
    return [i for i in ids
            if _on_board(layout, spec.target, spec.board_index, after.item_poses[i].position)
            and near_group(arrangement, spec.product_id, after.item_poses[i].position, spec.tolerances.proximity)]


def eval_task(spec, before, after, arrangement, checkpoints=()):
    """
    Judge one task. Composite tasks take the intermediate snapshots in
    checkpoints (one fewer than subtasks) and stop at the first failed subtask.
    """
    if spec.kind == TaskKind.COMPOSITE:
        states = [before, *checkpoints, after]
        if len(states) != len(spec.subtasks) + 1:
            raise StateMismatchError(f"composite task with {len(spec.subtasks)} subtasks needs "
                                     f"{len(spec.subtasks) - 1} checkpoints, got {len(checkpoints)}")
        for k, sub in enumerate(spec.subtasks):
            report = eval_task(sub, states[k], states[k + 1], arrangement)
            if not report.success:
                return SuccessReport(False, (Failure(Criterion.SUBTASK, subtask=k, detail=report.failed),))
        return SuccessReport(True)

    _check_ids(before, after, arrangement)
    tol = spec.tolerances
    failed = []
    placed = []
    if spec.kind in PICK_KINDS:
        if spec.product_id not in arrangement.products:
            raise StateMismatchError(f"unknown product '{spec.product_id}'")
        placed = _placed_items(spec, after, arrangement)
        if not placed:
            failed.append(Failure(Criterion.TARGET_NOT_PLACED))
    else:
        if spec.target not in after.door_angles:
            raise StateMismatchError(f"door '{spec.target}' is not in the snapshot")
        angle = after.door_angles[spec.target]
        ok = angle >= tol.open_angle if spec.kind == TaskKind.OPEN_DOOR else angle <= tol.closed_angle
        if not ok:
            failed.append(Failure(Criterion.DOOR_ANGLE))

    moved = disturbed_items(before, after, spec, exclude=placed)
    if moved:
        failed.append(Failure(Criterion.ITEMS_DISTURBED, tuple(moved)))
    if not robot_static(after, tol.static_vel):
        failed.append(Failure(Criterion.ROBOT_MOVING))
    return SuccessReport(not failed, tuple(failed))


# ===== COMPOSITES AND INSTRUCTIONS =====

def pick_n_items(products, tolerances=None):
    tol = tolerances or Tolerances()
    return TaskSpec(TaskKind.COMPOSITE, subtasks=tuple(
        TaskSpec(TaskKind.PICK_TO_BASKET, p, tolerances=tol) for p in products), tolerances=tol)


def pick_from_fridge(door_id, product_id, tolerances=None):
    tol = tolerances or Tolerances()
    return TaskSpec(TaskKind.COMPOSITE, subtasks=(
        TaskSpec(TaskKind.OPEN_DOOR, target=door_id, tolerances=tol),
        TaskSpec(TaskKind.PICK_TO_BASKET, product_id, tolerances=tol),
        TaskSpec(TaskKind.CLOSE_DOOR, target=door_id, tolerances=tol),
    ), tolerances=tol)


def _item_phrase(product):
    name = product.name
    if product.mesh == "bottle" and "bottle" not in name.lower():
        name += " bottle"
    return name


def instruction_for(spec, catalog, layout=None):
    """Language command for a task, e.g. 'move to the shelf, pick the Fanta bottle, and place it in the basket'."""
    if spec.kind == TaskKind.COMPOSITE:
        return ", then ".join(instruction_for(s, catalog, layout) for s in spec.subtasks)
    if spec.kind in PICK_KINDS:
        item = _item_phrase(catalog[spec.product_id])
        if spec.kind == TaskKind.PICK_TO_BASKET:
            return f"move to the shelf, pick the {item}, and place it in the basket"
        if spec.kind == TaskKind.PICK_FROM_FLOOR:
            return f"pick the {item} from the floor and place it on the shelf"
        return f"pick the {item} and place it on an empty board"
    fixture_id, k = _parse_door(spec.target)
    kind = FixtureKind.SHOWCASE
    if layout is not None:
        kind = layout.template_of(layout.placement(fixture_id)).kind
    verb = "open" if spec.kind == TaskKind.OPEN_DOOR else "close"
    if kind == FixtureKind.FRIDGE:
        return f"{verb} the fridge"
    ordinal = ORDINALS[k - 1] if k <= len(ORDINALS) else f"{k}th"
    return f"{verb} the {ordinal} door of the showcase"


# ===== SCENARIOS =====

class Axis(Enum):
    ROBOT_POSITION = "robot_position"
    TEXTURES = "textures"
    STORE_LAYOUT = "store_layout"
    SHELF_ARRANGEMENT = "unseen_shelf_arrangement"
    UNSEEN_TASK_ITEMS = "unseen_in_task_items"
    UNSEEN_ITEMS = "completely_unseen_items"


@dataclass(frozen=True)
class Scenario:
    name: str
    axes: frozenset

    def varies(self, axis):
        return axis in self.axes

    def to_dict(self):
        return {"name": self.name, "axes": sorted(a.value for a in self.axes)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], frozenset(Axis(a) for a in d.get("axes", ())))


SCENARIOS = {
    "in_domain": Scenario("in_domain", frozenset({Axis.ROBOT_POSITION})),
    "unseen_scenes": Scenario("unseen_scenes", frozenset({Axis.ROBOT_POSITION, Axis.TEXTURES,
                                                          Axis.STORE_LAYOUT})),
    "unseen_scenes_and_items": Scenario("unseen_scenes_and_items",
                                        frozenset({Axis.ROBOT_POSITION, Axis.TEXTURES, Axis.STORE_LAYOUT,
                                                   Axis.UNSEEN_TASK_ITEMS})),
}

# substream key -> axis that makes it vary per trial
_STREAM_AXES = {
    "robot": Axis.ROBOT_POSITION,
    "textures": Axis.TEXTURES,
    "layout": Axis.STORE_LAYOUT,
    "arrangement": Axis.SHELF_ARRANGEMENT,
}


def scenario(name):
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario '{name}', choose from {sorted(SCENARIOS)}") from None


def trial_seeds(scn, root_seed, trial):
    """
    Seeds per substream for one trial. Streams whose axis the scenario varies
    are derived per trial; the others are shared by every trial. The planner
    and task-choice streams always vary.
    """
    seeds = {}
    for key, axis in _STREAM_AXES.items():
        label = f"trial/{trial}/{key}" if scn.varies(axis) else f"fixed/{key}"
        seeds[key] = seeding.derive_seed(root_seed, label)
    seeds["planner"] = seeding.derive_seed(root_seed, f"trial/{trial}/planner")
    seeds["task"] = seeding.derive_seed(root_seed, f"trial/{trial}/task")
    return seeds


def eligible_products(scn, kind, catalog):
    """Product ids a trial of this task may target under the scenario."""
    kind = TaskKind(kind)
    if kind in DOOR_KINDS:
        return []
    if kind == TaskKind.COMPOSITE:
        kind = TaskKind.PICK_TO_BASKET
    if scn.varies(Axis.UNSEEN_ITEMS):
        return sorted(p.id for p in catalog if p.split == "unseen")
    side = "test" if scn.varies(Axis.UNSEEN_TASK_ITEMS) else "train"
    return catalog.split(kind.value, side)


def trial_record(scn, spec, report, instruction="", trial=None, extra=None):
    """One line of trials.jsonl."""
    record = {
        "scenario": scn.name,
        "task": spec.kind.value,
        "item": spec.product_id,
        "fixture": spec.target,
        "success": report.success,
        "failed": [f.describe() for f in report.failed],
        "instruction": instruction,
    }
    if trial is not None:
        record["trial"] = trial
    if extra:
        record.update(extra)
    return record


# ===== TRIAL SETUP =====

@dataclass(frozen=True, eq=False)
class Trial:
    arrangement: object
    spec: TaskSpec
    door_angles: dict
    frames: dict
    approach: tuple = (0.0, 0.0, 0.0)


def basket_region(base_pose):
    """Basket on a cart at the robot's front left, for a base pose (x, y, yaw)."""
    x, y, yaw = base_pose
    frame = Pose3.from_xyz_yaw(x, y, 0.0, yaw)
    center = frame.transform_points([0.3, 0.5, 0.45])[0]
    return Obb3(center, np.array([0.2, 0.15, 0.15]), yaw, "basket")


def approach_pose(target, standoff=0.95):
    """Nominal base pose facing a front-approached target frame."""
    p = target.compose(Pose3.from_xyz_yaw(0.0, standoff, 0.0, -0.5 * math.pi))
    return float(p.position[0]), float(p.position[1]), p.yaw()


def _front_item(arrangement, lane):
    """Top item of the front-most occupied slot."""
    slot = next(k for k, n in enumerate(lane.stock) if n > 0)
    level = lane.stock[slot] - 1
    for it in arrangement.items:
        if it.lane_id == lane.id and it.slot == slot and it.level == level:
            return it
    raise StateMismatchError(f"lane {lane.id} stock does not match its items")


def _stocked_lanes(arrangement, product_id, boards=None, kinds=None):
    layout = arrangement.layout
    out = []
    for lane in arrangement.lanes:
        if lane.product_id != product_id or lane.total() == 0:
            continue
        if boards is not None and lane.board_index not in boards:
            continue
        if kinds is not None and layout.template_of(layout.placement(lane.fixture_id)).kind not in kinds:
            continue
        out.append(lane)
    return out


def _take_item(arrangement, lane, item):
    """Arrangement with item detached from its lane (stock decremented)."""
    stock = list(lane.stock)
    stock[item.slot] -= 1
    lanes = tuple(replace(l, stock=tuple(stock)) if l.id == lane.id else l for l in arrangement.lanes)
    return replace(arrangement, lanes=lanes)


def _clear_board(arrangement, fixture_id, board_index):
    lanes = tuple(l for l in arrangement.lanes if not (l.fixture_id == fixture_id and l.board_index == board_index))
    items = tuple(it for it in arrangement.items
                  if not (it.fixture_id == fixture_id and it.board_index == board_index))
    return replace(arrangement, lanes=lanes, items=items)


def setup_trial(kind, arrangement, product_id, rng, tolerances=None, open_angle=math.radians(90.0)):
    """
    Prepare a scene for one atomic task. Returns a Trial with the (possibly
    modified) arrangement, the TaskSpec, initial door angles and the named
    frames the anchor templates refer to.
    """
    kind = TaskKind(kind)
    tol = tolerances or Tolerances()
    layout = arrangement.layout
    doors = {d: 0.0 for d in door_ids(layout)}

    if kind in DOOR_KINDS:
        if not doors:
            raise TrialSetupError("no fixture with doors in this layout")
        door = sorted(doors)[int(rng.integers(len(doors)))]
        if kind == TaskKind.CLOSE_DOOR:
            doors[door] = open_angle
        geo = door_geometry(layout, door)
        frames = {"handle_closed": geo.handle_pose(0.0), "handle_mid": geo.handle_pose(0.5 * open_angle),
                  "handle_open": geo.handle_pose(open_angle)}
        spec = TaskSpec(kind, target=door, tolerances=tol)
        return Trial(arrangement, spec, doors, frames, approach_pose(frames["handle_closed"], 0.9))

    if kind == TaskKind.PICK_TO_BASKET:
        lanes = _stocked_lanes(arrangement, product_id)
        if not lanes:
            raise TrialSetupError(f"no stocked lane of {product_id}")
        lane = lanes[int(rng.integers(len(lanes)))]
        item = _front_item(arrangement, lane)
        approach = approach_pose(item.pose)
        frames = {"item": item.pose, "basket": _basket_pose(basket_region(approach))}
        spec = TaskSpec(kind, product_id, target_items=(item.id,), tolerances=tol)
        return Trial(arrangement, spec, doors, frames, approach)

    shelves = (FixtureKind.SHELF,)
    if kind == TaskKind.PICK_FROM_FLOOR:
        lanes = _stocked_lanes(arrangement, product_id, boards=(1, 2), kinds=shelves)
        if not lanes:
            raise TrialSetupError(f"no {product_id} on a second or third shelf board")
        lane = lanes[int(rng.integers(len(lanes)))]
        item = _front_item(arrangement, lane)
        arr = _take_item(arrangement, lane, item)
        product = arrangement.products[product_id]
        frame = _fixture_frame(layout, lane.fixture_id)
        lateral = float(rng.uniform(-0.4, 0.4))
        hy = layout.template_of(layout.placement(lane.fixture_id)).half_extents[1]
        floor_pose = frame.compose(Pose3.from_xyz_yaw(lane.x + lateral, hy + 0.45, 0.5 * product.dims[2],
                                                      float(rng.uniform(-math.pi, math.pi))))
        dropped = replace(item, pose=floor_pose, lane_id="", slot=-1, level=-1, board_index=-1)
        arr = replace(arr, items=tuple(dropped if it.id == item.id else it for it in arr.items))
        frames = {"item": floor_pose, "destination": item.pose}
        spec = TaskSpec(kind, product_id, lane.fixture_id, lane.board_index, (item.id,), tolerances=tol)
        return Trial(arr, spec, doors, frames, approach_pose(floor_pose, 0.75))

    # board to board: one board up, onto an emptied board
    candidates = []
    for lane in _stocked_lanes(arrangement, product_id, boards=(1, 2), kinds=shelves):
        tpl = layout.template_of(layout.placement(lane.fixture_id))
        up = lane.board_index + 1
        if up < len(tpl.boards) and tpl.boards[up].gap is not None \
                and tpl.boards[up].gap >= arrangement.products[product_id].dims[2]:
            candidates.append(lane)
    if not candidates:
        raise TrialSetupError(f"no {product_id} lane with a usable board above it")
    lane = candidates[int(rng.integers(len(candidates)))]
    item = _front_item(arrangement, lane)
    arr = _clear_board(arrangement, lane.fixture_id, lane.board_index + 1)
    tpl = layout.template_of(layout.placement(lane.fixture_id))
    product = arrangement.products[product_id]
    destination = _fixture_frame(layout, lane.fixture_id).compose(
        Pose3.from_xyz_yaw(lane.x, lane.slots[0], tpl.boards[lane.board_index + 1].z + 0.5 * product.dims[2], 0.0))
    frames = {"item": item.pose, "destination": destination}
    spec = TaskSpec(kind, product_id, lane.fixture_id, lane.board_index + 1, (item.id,), tolerances=tol)
    return Trial(arr, spec, doors, frames, approach_pose(item.pose))


def _basket_pose(basket):
    return Pose3.from_xyz_yaw(*basket.center, basket.yaw)


# ===== KINEMATIC REPLAY =====

def _settle(arrangement, product, pose, basket):
    """Drop a released item straight down onto the basket, a board or the floor."""
    p = pose.position
    half_h = 0.5 * product.dims[2]
    z = half_h
    bottom = None if basket is None else basket.center[2] - basket.half_extents[2]
    if basket is not None and bool(basket.footprint().contains(p[:2])[0]) and p[2] >= bottom:
        z = bottom + half_h
    else:
        layout = arrangement.layout
        for placement in layout.placements:
            tpl = layout.template_of(placement)
            local = _fixture_frame(layout, placement.id).inverse().transform_points(p)[0]
            for board in tpl.boards:
                x0, y0, x1, y1 = board.rect
                if x0 <= local[0] <= x1 and y0 <= local[1] <= y1 and board.z <= local[2] and board.z + half_h > z:
                    z = max(z, board.z + half_h)
    return Pose3(np.array([p[0], p[1], z]), pose.orientation)


def replay_trajectory(model, traj, before, arrangement, grasp_tol=0.03, handle_tol=0.05):
    """
    After-snapshot of executing traj kinematically. Closing the gripper with
    the ee within grasp_tol of an item attaches it; within handle_tol of a door
    handle drags the door. Opening releases; released items settle downward.
    """
    poses = dict(before.item_poses)
    doors = dict(before.door_angles)
    geos = {d: door_geometry(arrangement.layout, d) for d in doors}
    products = _product_of(arrangement)
    held = None
    prev = 1.0
    for q, g in zip(traj.waypoints, traj.gripper):
        ee = fk(model, q, check=False).ee
        if held is not None and held[0] == "item":
            poses[held[1]] = ee.compose(held[2])
        elif held is not None:
            doors[held[1]] = geos[held[1]].angle_of(ee.position)
        if g < 0 <= prev and held is None:
            held = _grab(ee, poses, doors, geos, grasp_tol, handle_tol)
            if held is not None:
                logger.debug(f"Gripper closed on {held[1]}")
        elif g > 0 and held is not None:
            if held[0] == "item":
                product = arrangement.products[products[held[1]]]
                poses[held[1]] = _settle(arrangement, product, poses[held[1]], before.basket)
            held = None
        prev = g
    return SceneState(poses, traj.last.copy(), np.zeros(11), doors, before.basket,
                      before.time + (len(traj) - 1) * traj.dt)


def _grab(ee, poses, doors, geos, grasp_tol, handle_tol):
    best, best_d = None, grasp_tol
    for item_id, pose in poses.items():
        d = float(np.linalg.norm(pose.position - ee.position))
        if d <= best_d:
            best, best_d = item_id, d
    if best is not None:
        return "item", best, ee.inverse().compose(poses[best])
    for door_id, angle in doors.items():
        handle = geos[door_id].handle_pose(angle)
        if float(np.linalg.norm(handle.position - ee.position)) <= handle_tol:
            return "door", door_id, None
    return None
