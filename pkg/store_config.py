"""
Configuration: defaults, validation/repair and the typed parameter builders.

The config file is JSON with one section per pipeline stage. Validation fills
missing keys from DEFAULT_CONFIG, drops unknown keys and clamps
probabilities (with warnings); values of the wrong type or outside their
domain raise ConfigValidationError naming the dotted key.
"""

import copy
import json
import logging
import math
import os

from arrangement import ArrangeParams
from layout import LayoutParams, StoreSpec
from lod import LodParams
from planner import PlannerParams
from task_eval import SCENARIOS, Tolerances

logger = logging.getLogger("darkstore.store_config")

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
CONFIG_FILE = os.path.join(BASE_DIR, "config.json")
CONFIG_ENV = "DARKSTORE_CONFIG"


class ConfigValidationError(Exception):
    """Raised when config validation fails; key is the dotted path of the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


DEFAULT_CONFIG = {
    "store": {"width": 20.0, "depth": 15.0, "door_width": 1.5, "templates": []},
    "tensor_field": {"decay": 0.4, "resolution": 0.25, "edge_resample": 1.0},
    "layout": {
        "passage_width": 1.2,
        "skip_prob": 0.15,
        "max_attempts": 100,
        "n_seed_fixtures": 4,
        "angle_tol_deg": 15.0,
        "end_gap": 0.1,
        "pair_gap": 0.05,
        "prefer_pairs": True,
        "check_resolution": 0.25,
        "rebuild_field_between_passes": False,
    },
    "arrangement": {
        "gap": 0.03,
        "jitter_pos": 0.005,
        "jitter_yaw_deg": 3.0,
        "margin": 0.01,
        "min_facings": 2,
        "max_facings": 5,
        "policy": "round_robin",
        "depletion_rate": 0.35,
        "depletion_days": 0.0,
    },
    "lod": {
        "n_samples": 8192,
        "cell_fractions": [0.005, 0.01, 0.02, 0.04, 0.08, 0.16, 0.32],
        "cylinder_segments": 16,
        "near_fixtures": 1,
    },
    "planner": {
        "dq_rot": 0.02,
        "dq_lin": 0.01,
        "rrt_eta": 0.15,
        "max_iters": 5000,
        "margin": 0.005,
        "damping": 0.05,
        "ik_iters": 50,
        "ik_restarts": 10,
        "pos_tol": 1e-4,
        "rot_tol_deg": 0.5,
        "shortcut_attempts": 100,
        "dt": 0.1,
        "cull_radius": 2.0,
        "robot": "",
    },
    "task_eval": {
        "disturb_pos": 0.01,
        "disturb_rot_deg": 5.0,
        "static_vel": 0.01,
        "open_angle_deg": 60.0,
        "closed_angle_deg": 5.0,
        "proximity": 0.3,
        "grasp_tol": 0.03,
    },
    "textures": {"floor": 26, "wall": 17, "ceiling": 15},
    "batch": {
        "trials": 248,
        "workers": 0,
        "scenario": "in_domain",
        "tasks": ["pick_to_basket", "board_to_board", "pick_from_floor", "open_door", "close_door"],
    },
    "logging": {"level": "INFO", "file": ""},
}

# Value domains. "pos": > 0, "nonneg": >= 0, "prob": clamped into [0, 1],
# "count": integer >= 1, "count0": integer >= 0.
SCHEMA = {
    "store": {"width": "pos", "depth": "pos", "door_width": "pos", "templates": "str_list"},
    "tensor_field": {"decay": "pos", "resolution": "pos", "edge_resample": "pos"},
    "layout": {
        "passage_width": "pos", "skip_prob": "prob", "max_attempts": "count", "n_seed_fixtures": "count0",
        "angle_tol_deg": "pos", "end_gap": "nonneg", "pair_gap": "nonneg", "prefer_pairs": "bool",
        "check_resolution": "pos", "rebuild_field_between_passes": "bool",
    },
    "arrangement": {
        "gap": "nonneg", "jitter_pos": "nonneg", "jitter_yaw_deg": "nonneg", "margin": "nonneg",
        "min_facings": "count", "max_facings": "count", "policy": "str", "depletion_rate": "nonneg",
        "depletion_days": "nonneg",
    },
    "lod": {"n_samples": "count", "cell_fractions": "pos_list", "cylinder_segments": "count",
            "near_fixtures": "count0"},
    "planner": {
        "dq_rot": "pos", "dq_lin": "pos", "rrt_eta": "pos", "max_iters": "count", "margin": "nonneg",
        "damping": "pos", "ik_iters": "count", "ik_restarts": "count0", "pos_tol": "pos", "rot_tol_deg": "pos",
        "shortcut_attempts": "count0", "dt": "pos", "cull_radius": "pos", "robot": "str",
    },
    "task_eval": {
        "disturb_pos": "pos", "disturb_rot_deg": "pos", "static_vel": "pos", "open_angle_deg": "pos",
        "closed_angle_deg": "pos", "proximity": "pos", "grasp_tol": "pos",
    },
    "textures": {"floor": "count", "wall": "count", "ceiling": "count"},
    "batch": {"trials": "count", "workers": "count0", "scenario": "str", "tasks": "str_list"},
    "logging": {"level": "str", "file": "str"},
}

POLICIES = ("round_robin", "random")
LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _number(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(key, f"expected a number, got {type(value).__name__}")
    if isinstance(value, float) and (math.isinf(value) or math.isnan(value)):
        raise ConfigValidationError(key, "infinity or NaN is not allowed")
    return value


def _integer(value, key, low):
    value = _number(value, key)
    if isinstance(value, float):
        if not value.is_integer():
            raise ConfigValidationError(key, f"expected an integer, got {value}")
        value = int(value)
    if value < low:
        raise ConfigValidationError(key, f"must be at least {low}, got {value}")
    return value


def validate_value(kind, value, key, warnings):
    if kind == "pos":
        value = _number(value, key)
        if value <= 0:
            raise ConfigValidationError(key, f"must be positive, got {value}")
        return float(value)
    if kind == "nonneg":
        value = _number(value, key)
        if value < 0:
            raise ConfigValidationError(key, f"must be non-negative, got {value}")
        return float(value)
    if kind == "prob":
        value = float(_number(value, key))
        if value < 0.0:
            warnings.append(f"{key} was {value}, clamped to 0.")
            return 0.0
        if value > 1.0:
            warnings.append(f"{key} was {value}, clamped to 1.")
            return 1.0
        return value
    if kind == "count":
        return _integer(value, key, 1)
    if kind == "count0":
        return _integer(value, key, 0)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigValidationError(key, f"expected true or false, got {value!r}")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigValidationError(key, f"expected a string, got {type(value).__name__}")
        return value
    if kind == "str_list":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigValidationError(key, "expected a list of strings")
        return list(value)
    if kind == "pos_list":
        if not isinstance(value, list) or not value:
            raise ConfigValidationError(key, "expected a non-empty list of numbers")
        return [validate_value("pos", v, f"{key}[{i}]", warnings) for i, v in enumerate(value)]
    raise ValueError(f"unknown schema kind {kind}")


def validate_config(config):
    """
    Validate configuration values and repair what can be repaired.
    Returns a tuple of (validated_config, list_of_warnings).
    """
    if not isinstance(config, dict):
        raise ConfigValidationError("<root>", f"config must be an object, got {type(config).__name__}")
    warnings = []
    validated = {}
    for key in sorted(set(config) - set(SCHEMA)):
        warnings.append(f"unknown section '{key}' ignored.")

    for section, fields in SCHEMA.items():
        raw = config.get(section, {})
        if not isinstance(raw, dict):
            raise ConfigValidationError(section, f"section should be an object, got {type(raw).__name__}")
        for key in sorted(set(raw) - set(fields)):
            warnings.append(f"unknown key '{section}.{key}' ignored.")
        out = {}
        for key, kind in fields.items():
            value = raw.get(key, copy.deepcopy(DEFAULT_CONFIG[section][key]))
            out[key] = validate_value(kind, value, f"{section}.{key}", warnings)
        validated[section] = out

    arr = validated["arrangement"]
    if arr["min_facings"] > arr["max_facings"]:
        raise ConfigValidationError("arrangement.min_facings", "must not exceed arrangement.max_facings")
    if arr["policy"] not in POLICIES:
        raise ConfigValidationError("arrangement.policy", f"must be one of {', '.join(POLICIES)}")
    if validated["batch"]["scenario"] not in SCENARIOS:
        raise ConfigValidationError("batch.scenario", f"must be one of {', '.join(sorted(SCENARIOS))}")
    level = validated["logging"]["level"].upper()
    if level not in LEVELS:
        warnings.append(f"logging.level was '{validated['logging']['level']}', using INFO.")
        level = "INFO"
    validated["logging"]["level"] = level
    return validated, warnings


def config_path(path=None):
    return path or os.environ.get(CONFIG_ENV) or CONFIG_FILE


def load_config(path=None):
    """Load and validate configuration from file (argument, then $DARKSTORE_CONFIG, then config.json)."""
    path = config_path(path)
    if not os.path.exists(path):
        logger.info(f"Config file {path} not found, using defaults.")
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw_config = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigValidationError("<file>", f"malformed JSON in {path}: {e}") from e
    except OSError as e:
        raise ConfigValidationError("<file>", f"cannot read {path}: {e}") from e

    validated, warnings = validate_config(raw_config)
    for warning in warnings:
        logger.warning(f"Config validation: {warning}")
    return validated


# ===== PARAMETER BUILDERS =====

def store_spec(config):
    s = config["store"]
    return StoreSpec.rectangular(s["width"], s["depth"], s["door_width"])


def layout_params(config, seed=0):
    lay, tf, tex = config["layout"], config["tensor_field"], config["textures"]
    return LayoutParams(
        passage_width=lay["passage_width"], skip_prob=lay["skip_prob"], max_attempts=lay["max_attempts"],
        n_seed_fixtures=lay["n_seed_fixtures"], angle_tol=math.radians(lay["angle_tol_deg"]), seed=seed,
        edge_resample=tf["edge_resample"], decay=tf["decay"], resolution=tf["resolution"],
        end_gap=lay["end_gap"], pair_gap=lay["pair_gap"], prefer_pairs=lay["prefer_pairs"],
        check_resolution=lay["check_resolution"],
        rebuild_field_between_passes=lay["rebuild_field_between_passes"],
        floor_textures=tex["floor"], wall_textures=tex["wall"], ceiling_textures=tex["ceiling"],
    )


def arrange_params(config, seed=0):
    a = config["arrangement"]
    return ArrangeParams(
        gap=a["gap"], jitter_pos=a["jitter_pos"], jitter_yaw=math.radians(a["jitter_yaw_deg"]),
        depletion_rate=a["depletion_rate"], margin=a["margin"], min_facings=a["min_facings"],
        max_facings=a["max_facings"], seed=seed,
    )


def lod_params(config, seed=0):
    lo = config["lod"]
    return LodParams(n_samples=lo["n_samples"], cell_fractions=tuple(lo["cell_fractions"]),
                     cylinder_segments=lo["cylinder_segments"], seed=seed)


def planner_params(config):
    p = config["planner"]
    return PlannerParams(
        dq_rot=p["dq_rot"], dq_lin=p["dq_lin"], rrt_eta=p["rrt_eta"], max_iters=p["max_iters"],
        margin=p["margin"], damping=p["damping"], ik_iters=p["ik_iters"], ik_restarts=p["ik_restarts"],
        pos_tol=p["pos_tol"], rot_tol=math.radians(p["rot_tol_deg"]), shortcut_attempts=p["shortcut_attempts"],
        dt=p["dt"], cull_radius=p["cull_radius"],
    )


def tolerances(config):
    t = config["task_eval"]
    return Tolerances(
        disturb_pos=t["disturb_pos"], disturb_rot=math.radians(t["disturb_rot_deg"]), static_vel=t["static_vel"],
        open_angle=math.radians(t["open_angle_deg"]), closed_angle=math.radians(t["closed_angle_deg"]),
        proximity=t["proximity"],
    )
