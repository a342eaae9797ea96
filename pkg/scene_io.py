"""
On-disk formats: scene files, asset manifests, trajectory logs, snapshots
and the 11-value action export.

Everything is canonical JSON: sorted keys, floats written with 17
significant digits, so identical inputs give byte-identical files.
"""

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from packaging.version import InvalidVersion, Version

from arrangement import Arrangement, Item, Lane, ProductSpec
from assets import template_from_dict, template_to_dict
from fsutil import PathTraversalError, atomic_write_text, resolve_asset_path
from geometry import Obb3, Polygon, Pose3, wrap_angle
from layout import FixturePlacement, Layout, Provenance, StoreSpec
from mesh_io import read_obj
from planner import Segment, Trajectory
from task_eval import SCENARIOS, Scenario, SceneState

logger = logging.getLogger("darkstore.scene_io")

SCHEMA_VERSION = "1.0"


class SceneFormatError(ValueError):
    """Raised when a scene or manifest file is malformed or from an incompatible schema."""
    pass


# ===== CANONICAL JSON =====

def _encode(value, out):
    if value is None or isinstance(value, bool):
        out.append(json.dumps(value))
    elif isinstance(value, (int, np.integer)):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            raise SceneFormatError(f"non-finite number {v} cannot be serialized")
        out.append(format(v + 0.0, ".17g"))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, dict):
        out.append("{")
        for k, key in enumerate(sorted(value)):
            if k:
                out.append(",")
            out.append(json.dumps(str(key), ensure_ascii=False))
            out.append(":")
            _encode(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple, np.ndarray)):
        out.append("[")
        for k, v in enumerate(value):
            if k:
                out.append(",")
            _encode(v, out)
        out.append("]")
    else:
        raise SceneFormatError(f"cannot serialize {type(value).__name__}")


def canonical_json(value):
    out = []
    _encode(value, out)
    return "".join(out)


def write_json(path, value):
    atomic_write_text(path, canonical_json(value) + "\n")


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"{path}: invalid JSON ({e})") from e


def check_schema(data, what="scene"):
    raw = data.get("schema_version")
    if raw is None:
        raise SceneFormatError(f"{what} file has no schema_version")
    try:
        found, ours = Version(str(raw)), Version(SCHEMA_VERSION)
    except InvalidVersion as e:
        raise SceneFormatError(f"{what} schema_version '{raw}' is not a version") from e
    if found.major != ours.major:
        raise SceneFormatError(f"{what} schema {found} is incompatible with {ours}")
    if found > ours:
        logger.warning(f"{what} schema {found} is newer than {ours}; unknown fields are ignored")


def _require(d, key, where):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise SceneFormatError(f"{where}: missing '{key}'") from None


# ===== LAYOUT AND ARRANGEMENT =====

def layout_to_dict(layout):
    store = layout.store
    used = sorted({p.template_id for p in layout.placements})
    return {
        "store": {
            "width": store.width,
            "depth": store.depth,
            "walls": store.walls.to_list(),
            "doors": [[list(a), list(b)] for a, b in store.doors],
        },
        "textures": dict(layout.textures),
        "templates": [template_to_dict(layout.templates[t]) for t in used],
        "placements": [
            {"id": p.id, "template": p.template_id, "center": list(p.center), "yaw": p.yaw,
             "provenance": p.provenance.value}
            for p in layout.placements
        ],
    }


def layout_from_dict(d):
    try:
        s = d["store"]
        store = StoreSpec(float(s["width"]), float(s["depth"]), Polygon(np.array(s["walls"], dtype=float)),
                          tuple((tuple(a), tuple(b)) for a, b in s.get("doors", [])))
        templates = {t["id"]: template_from_dict(t) for t in d.get("templates", [])}
        placements = tuple(
            FixturePlacement(p["id"], p["template"], tuple(float(v) for v in p["center"]), float(p["yaw"]),
                             Provenance(p["provenance"]))
            for p in d.get("placements", [])
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SceneFormatError(f"layout: {e}") from e
    for p in placements:
        if p.template_id not in templates:
            raise SceneFormatError(f"layout: placement {p.id} uses unknown template '{p.template_id}'")
    return Layout(store, templates, placements, None, dict(d.get("textures", {})))


def _product_to_dict(p):
    d = {"id": p.id, "name": p.name, "category": p.category, "dims": list(p.dims), "mesh": p.mesh,
         "split": p.split}
    if p.stackable:
        d["stackable"] = True
        d["max_stack"] = p.max_stack
    if p.chilled:
        d["chilled"] = True
    return d


def arrangement_to_dict(arr):
    used = sorted({lane.product_id for lane in arr.lanes} | {it.product_id for it in arr.items})
    return {
        "products": [_product_to_dict(arr.products[p]) for p in used],
        "lanes": [
            {"id": l.id, "fixture": l.fixture_id, "board": l.board_index, "product": l.product_id, "x": l.x,
             "slots": list(l.slots), "stock": list(l.stock)}
            for l in arr.lanes
        ],
        "items": [
            {"id": it.id, "product": it.product_id, "pose": it.pose.to_list(), "lane": it.lane_id,
             "slot": it.slot, "level": it.level, "fixture": it.fixture_id, "board": it.board_index}
            for it in arr.items
        ],
    }


def arrangement_from_dict(d, layout):
    try:
        products = {p["id"]: ProductSpec.from_dict(p) for p in d.get("products", [])}
        lanes = tuple(
            Lane(l["id"], l["fixture"], int(l["board"]), l["product"], float(l["x"]),
                 tuple(float(v) for v in l["slots"]), tuple(int(v) for v in l["stock"]))
            for l in d.get("lanes", [])
        )
        items = tuple(
            Item(it["id"], it["product"], Pose3.from_list(it["pose"]), it["lane"], int(it["slot"]),
                 int(it["level"]), it.get("fixture", ""), int(it.get("board", -1)))
            for it in d.get("items", [])
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SceneFormatError(f"arrangement: {e}") from e
    return Arrangement(layout, lanes, items, products)


# ===== SCENE FILE =====

@dataclass(eq=False)
class SceneFile:
    root_seed: int
    layout: Layout
    arrangement: Arrangement | None = None
    scenario: Scenario | None = None
    manifest: str = ""
    schema_version: str = SCHEMA_VERSION


def scene_to_dict(scene):
    d = {
        "schema_version": scene.schema_version,
        "root_seed": int(scene.root_seed),
        "layout": layout_to_dict(scene.layout),
        "scenario": (scene.scenario or SCENARIOS["in_domain"]).to_dict(),
    }
    if scene.arrangement is not None:
        d["arrangement"] = arrangement_to_dict(scene.arrangement)
    if scene.manifest:
        d["manifest"] = scene.manifest
    return d


def scene_from_dict(d):
    check_schema(d)
    layout = layout_from_dict(_require(d, "layout", "scene"))
    arrangement = arrangement_from_dict(d["arrangement"], layout) if "arrangement" in d else None
    try:
        scn = Scenario.from_dict(d["scenario"]) if "scenario" in d else None
    except (KeyError, TypeError, ValueError) as e:
        raise SceneFormatError(f"scenario: {e}") from e
    return SceneFile(int(_require(d, "root_seed", "scene")), layout, arrangement, scn,
                     d.get("manifest", ""), str(d["schema_version"]))


def save_scene(scene, path):
    write_json(path, scene_to_dict(scene))
    logger.info(f"Scene written to {path}")


def load_scene(path):
    return scene_from_dict(read_json(path))


# ===== ASSET MANIFEST =====

@dataclass(frozen=True)
class AssetEntry:
    id: str
    category: str
    scale: float
    orientation: str
    mesh: str
    lod_mesh: str
    dims: tuple


def manifest_to_dict(entries):
    return {"schema_version": SCHEMA_VERSION,
            "assets": [{"id": e.id, "category": e.category, "scale": e.scale, "orientation": e.orientation,
                        "mesh": e.mesh, "lod_mesh": e.lod_mesh, "dims": list(e.dims)} for e in entries]}


def manifest_from_dict(d):
    check_schema(d, "manifest")
    try:
        return [AssetEntry(a["id"], a["category"], float(a["scale"]), a.get("orientation", ""), a["mesh"],
                           a.get("lod_mesh", ""), tuple(float(v) for v in a["dims"])) for a in d["assets"]]
    except (KeyError, TypeError, ValueError) as e:
        raise SceneFormatError(f"manifest: {e}") from e


def check_manifest(entries, base_dir, rel_tol=0.02):
    """
    Problems found in a manifest: unresolvable paths and meshes whose scaled
    bounding box disagrees with the declared dims by more than rel_tol.
    """
    problems = []
    for e in entries:
        try:
            path = resolve_asset_path(base_dir, e.mesh)
            if e.lod_mesh:
                resolve_asset_path(base_dir, e.lod_mesh)
        except PathTraversalError as err:
            problems.append(f"{e.id}: {err}")
            continue
        try:
            mesh = read_obj(path)
        except (OSError, ValueError) as err:
            problems.append(f"{e.id}: cannot read mesh ({err})")
            continue
        lo, hi = mesh.bounds()
        size = (hi - lo) * e.scale
        dims = np.asarray(e.dims, dtype=float)
        if np.any(np.abs(size - dims) > rel_tol * dims):
            problems.append(f"{e.id}: mesh extent {np.round(size, 4).tolist()} differs from dims {list(e.dims)}")
    return problems


# ===== SNAPSHOTS =====

def state_to_dict(state):
    d = {"items": {k: v.to_list() for k, v in state.item_poses.items()},
         "config": state.config, "velocities": state.velocities,
         "doors": dict(state.door_angles), "time": state.time}
    if state.basket is not None:
        b = state.basket
        d["basket"] = {"center": b.center, "half_extents": b.half_extents, "yaw": b.yaw}
    return d


def state_from_dict(d):
    try:
        basket = None
        if d.get("basket") is not None:
            b = d["basket"]
            basket = Obb3(np.array(b["center"]), np.array(b["half_extents"]), float(b.get("yaw", 0.0)), "basket")
        return SceneState({k: Pose3.from_list(v) for k, v in d["items"].items()},
                          np.array(d.get("config", [0.0] * 11)), np.array(d.get("velocities", [0.0] * 11)),
                          {k: float(v) for k, v in d.get("doors", {}).items()}, basket, float(d.get("time", 0.0)))
    except (KeyError, TypeError, ValueError) as e:
        raise SceneFormatError(f"snapshot: {e}") from e


# ===== TRAJECTORY LOG =====

def format_trajectory_log(traj, records):
    """Header line (dt, segments) then one canonical record per waypoint."""
    header = {"dt": traj.dt, "waypoints": len(traj),
              "segments": [{"anchor": s.anchor_index, "method": s.method, "status": s.status,
                            "start": s.start, "end": s.end} for s in traj.segments]}
    return "\n".join(canonical_json(r) for r in [header, *records]) + "\n"


def write_trajectory_log(path, traj, records):
    atomic_write_text(path, format_trajectory_log(traj, records))


def read_trajectory_log(path):
    with open(path, "r", encoding="utf-8") as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines:
        raise SceneFormatError(f"{path}: empty trajectory log")
    header, records = lines[0], lines[1:]
    if len(records) != header.get("waypoints", len(records)):
        raise SceneFormatError(f"{path}: header announces {header.get('waypoints')} waypoints, found {len(records)}")
    segments = [Segment(s["anchor"], s["method"], s["status"], s["start"], s["end"])
                for s in header.get("segments", [])]
    return Trajectory(np.array([r["config"] for r in records], dtype=float).reshape(-1, 11),
                      np.array([r["gripper"] for r in records], dtype=float), float(header["dt"]), segments)


# ===== ACTION EXPORT =====

def export_actions(traj, dt=None):
    """
    (N, 11) action records: 7 arm joint targets, gripper, torso, then base
    forward and yaw velocities toward the next waypoint (zero on the last).
    """
    dt = traj.dt if dt is None else dt
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    q = traj.waypoints
    out = np.zeros((len(q), 11))
    out[:, 0:7] = q[:, 4:11]
    out[:, 7] = traj.gripper
    out[:, 8] = q[:, 3]
    if len(q) > 1:
        d = q[1:, :2] - q[:-1, :2]
        yaw = q[:-1, 2]
        out[:-1, 9] = (d[:, 0] * np.cos(yaw) + d[:, 1] * np.sin(yaw)) / dt
        out[:-1, 10] = np.array([wrap_angle(a) for a in q[1:, 2] - q[:-1, 2]]) / dt
    return out


def integrate_base(start, actions, dt):
    """Base poses (N, 3) reconstructed from exported velocities, starting at start = (x, y, yaw)."""
    poses = [np.asarray(start, dtype=float)]
    for v, w in actions[:-1, 9:11]:
        x, y, yaw = poses[-1]
        poses.append(np.array([x + v * math.cos(yaw) * dt, y + v * math.sin(yaw) * dt, wrap_angle(yaw + w * dt)]))
    return np.array(poses)


def action_records(actions):
    return [{"arm": list(a[0:7]), "gripper": a[7], "torso": a[8], "base": list(a[9:11])} for a in actions]
