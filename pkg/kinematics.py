"""
Mobile manipulator kinematics: a planar base, a prismatic torso and a
7-joint revolute arm, with collision spheres attached to every link.

A configuration is an 11-vector (x, y, yaw, torso, arm1..arm7). The last
eight entries form the manipulation sub-space planned with the base frozen.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from geometry import Pose3, wrap_angle

logger = logging.getLogger("darkstore.kinematics")

N_CONFIG = 11
BASE = slice(0, 3)
MANIP = slice(3, 11)
TORSO_INDEX = 3
LIMIT_TOL = 1e-9


class JointLimitError(ValueError):
    """Raised when a configuration lies outside the joint limits."""
    pass


# ===== SE(3) =====

def _skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def _left_jacobian(w):
    theta = float(np.linalg.norm(w))
    k = _skew(w)
    if theta < 1e-8:
        return np.eye(3) + 0.5 * k + k @ k / 6.0
    return (np.eye(3) + (1.0 - math.cos(theta)) / theta ** 2 * k
            + (theta - math.sin(theta)) / theta ** 3 * k @ k)


def se3_exp(twist):
    """Twist (v, w) -> Pose3; w is a rotation vector."""
    twist = np.asarray(twist, dtype=float)
    v, w = twist[:3], twist[3:]
    return Pose3(_left_jacobian(w) @ v, Rotation.from_rotvec(w).as_quat())


def se3_log(pose):
    """
    Pose3 -> twist (v, w). For a rotation of exactly pi the rotation vector
    is the one scipy returns (principal branch, |w| = pi).
    """
    w = pose.rotation().as_rotvec()
    v = np.linalg.solve(_left_jacobian(w), pose.position)
    return np.concatenate([v, w])


# ===== ROBOT MODEL =====

def _rotation_about(axis, angle):
    """Rodrigues rotation matrix for a unit axis."""
    k = _skew(axis)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * k @ k


def _matrix(pose):
    return pose.matrix() if isinstance(pose, Pose3) else np.asarray(pose, dtype=float)


@dataclass(frozen=True, eq=False)
class Joint:
    name: str
    offset: np.ndarray
    axis: np.ndarray
    limits: tuple

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        n = float(np.linalg.norm(axis))
        if n == 0.0:
            raise ValueError(f"joint {self.name}: axis must be non-zero")
        if not self.limits[0] < self.limits[1]:
            raise ValueError(f"joint {self.name}: lower limit must be below upper limit")
        object.__setattr__(self, "axis", axis / n)
        object.__setattr__(self, "offset", _matrix(self.offset))


@dataclass(frozen=True, eq=False)
class RobotModel:
    """
    torso_offset places the torso frame on the base at torso = 0; the torso
    joint translates along its z. Joint offsets are parent->joint frames at
    zero angle. spheres maps link name ('base', 'torso' or a joint name) to
    (local centers (n, 3), radii (n,)).
    """
    name: str
    base_radius: float
    torso_offset: np.ndarray
    torso_limits: tuple
    joints: tuple
    ee_offset: np.ndarray
    spheres: dict = field(default_factory=dict)
    stow: np.ndarray = None
    ready: np.ndarray = None

    def __post_init__(self):
        if not self.torso_limits[0] < self.torso_limits[1]:
            raise ValueError("torso lower limit must be below upper limit")
        if not self.base_radius > 0:
            raise ValueError("base radius must be positive")
        if len(self.joints) != N_CONFIG - 4:
            raise ValueError(f"arm must have {N_CONFIG - 4} joints, got {len(self.joints)}")
        object.__setattr__(self, "torso_offset", _matrix(self.torso_offset))
        object.__setattr__(self, "ee_offset", _matrix(self.ee_offset))
        spheres = {}
        for link, (centers, radii) in self.spheres.items():
            c = np.asarray(centers, dtype=float).reshape(-1, 3)
            r = np.asarray(radii, dtype=float).reshape(-1)
            if np.any(r <= 0):
                raise ValueError(f"collision spheres of {link} need positive radii")
            spheres[link] = (c, r)
        object.__setattr__(self, "spheres", spheres)
        zero = np.array([self.torso_limits[0]] + [0.0] * len(self.joints))
        object.__setattr__(self, "stow", np.asarray(self.stow if self.stow is not None else zero, dtype=float))
        object.__setattr__(self, "ready", np.asarray(self.ready if self.ready is not None else self.stow, dtype=float))

    @property
    def manip_lower(self):
        return np.array([self.torso_limits[0]] + [j.limits[0] for j in self.joints])

    @property
    def manip_upper(self):
        return np.array([self.torso_limits[1]] + [j.limits[1] for j in self.joints])

    def n_spheres(self):
        return sum(len(r) for _, r in self.spheres.values())


def _pose_from_dict(d):
    xyz = d.get("xyz", [0.0, 0.0, 0.0])
    rpy = d.get("rpy", [0.0, 0.0, 0.0])
    return Pose3.from_xyz_rpy(xyz, rpy)


def robot_from_dict(data):
    joints = tuple(
        Joint(j["name"], _pose_from_dict(j), j["axis"], (float(j["limits"][0]), float(j["limits"][1])))
        for j in data["arm"]
    )
    spheres = {}
    for link, entries in data.get("spheres", {}).items():
        spheres[link] = ([e["center"] for e in entries], [e["radius"] for e in entries])
    return RobotModel(
        name=data.get("name", "robot"),
        base_radius=float(data["base_radius"]),
        torso_offset=_pose_from_dict(data["torso"]),
        torso_limits=tuple(float(v) for v in data["torso"]["limits"]),
        joints=joints,
        ee_offset=_pose_from_dict(data["ee_offset"]),
        spheres=spheres,
        stow=data.get("stow"),
        ready=data.get("ready"),
    )


def load_robot(path):
    with open(path, "r", encoding="utf-8") as f:
        return robot_from_dict(json.load(f))


# ===== CONFIGURATIONS =====

def make_config(base=(0.0, 0.0, 0.0), manip=None, model=None):
    q = np.zeros(N_CONFIG)
    q[BASE] = base
    q[2] = wrap_angle(q[2])
    if manip is not None:
        q[MANIP] = manip
    elif model is not None:
        q[MANIP] = model.stow
    return q


def check_limits(model, q):
    m = np.asarray(q, dtype=float)[MANIP]
    lo, hi = model.manip_lower, model.manip_upper
    bad = np.nonzero((m < lo - LIMIT_TOL) | (m > hi + LIMIT_TOL))[0]
    if len(bad):
        names = ["torso"] + [j.name for j in model.joints]
        i = int(bad[0])
        raise JointLimitError(f"{names[i]} = {m[i]:.6f} outside [{lo[i]:.6f}, {hi[i]:.6f}]")


def within_limits(model, q):
    m = np.asarray(q, dtype=float)[MANIP]
    return bool(np.all(m >= model.manip_lower - LIMIT_TOL) and np.all(m <= model.manip_upper + LIMIT_TOL))


def clip_manip(model, manip):
    return np.clip(manip, model.manip_lower, model.manip_upper)


# ===== FORWARD KINEMATICS =====

@dataclass(frozen=True, eq=False)
class FkResult:
    frames: dict
    sphere_centers: np.ndarray
    sphere_radii: np.ndarray
    ee: Pose3

    def ee_matrix(self):
        return self.frames["ee"]


def _chain(model, q):
    """World 4x4 frames of base, torso, every arm joint and the ee."""
    frames = {}
    base = np.eye(4)
    c, s = math.cos(q[2]), math.sin(q[2])
    base[:2, :2] = [[c, -s], [s, c]]
    base[0, 3], base[1, 3] = q[0], q[1]
    frames["base"] = base
    lift = np.eye(4)
    lift[2, 3] = q[TORSO_INDEX]
    current = base @ model.torso_offset @ lift
    frames["torso"] = current
    for k, joint in enumerate(model.joints):
        rot = np.eye(4)
        rot[:3, :3] = _rotation_about(joint.axis, q[TORSO_INDEX + 1 + k])
        current = current @ joint.offset @ rot
        frames[joint.name] = current
    frames["ee"] = current @ model.ee_offset
    return frames


def _ee_matrix(model, q):
    return _chain(model, q)["ee"]


def world_spheres(model, frames):
    centers, radii = [], []
    for link, (local, r) in model.spheres.items():
        m = frames[link]
        centers.append(local @ m[:3, :3].T + m[:3, 3])
        radii.append(r)
    if not centers:
        return np.zeros((0, 3)), np.zeros(0)
    return np.vstack(centers), np.concatenate(radii)


def fk(model, q, check=True):
    """Link frames, world collision spheres and the ee pose for configuration q."""
    q = np.asarray(q, dtype=float)
    if check:
        check_limits(model, q)
    frames = _chain(model, q)
    centers, radii = world_spheres(model, frames)
    return FkResult(frames, centers, radii, Pose3.from_matrix(frames["ee"]))


# ===== INVERSE KINEMATICS =====

def pose_error(current, target):
    """6-vector (position error, rotation-vector error) from 4x4 current to 4x4 target, world frame."""
    dp = target[:3, 3] - current[:3, 3]
    dr = Rotation.from_matrix(target[:3, :3] @ current[:3, :3].T).as_rotvec()
    return np.concatenate([dp, dr])


def manipulator_jacobian(model, q, step=1e-6):
    """Central-difference 6x8 Jacobian of the ee pose w.r.t. torso and arm joints."""
    q = np.asarray(q, dtype=float)
    jac = np.zeros((6, 8))
    for i in range(8):
        qp = q.copy()
        qm = q.copy()
        qp[TORSO_INDEX + i] += step
        qm[TORSO_INDEX + i] -= step
        mp = _ee_matrix(model, qp)
        mm = _ee_matrix(model, qm)
        jac[:3, i] = (mp[:3, 3] - mm[:3, 3]) / (2.0 * step)
        jac[3:, i] = Rotation.from_matrix(mp[:3, :3] @ mm[:3, :3].T).as_rotvec() / (2.0 * step)
    return jac


def ik_step(model, q, target, damping=0.05):
    """One damped-least-squares update of the manipulation joints, clipped to limits."""
    q = np.asarray(q, dtype=float)
    target_m = _matrix(target)
    err = pose_error(_ee_matrix(model, q), target_m)
    if not np.any(err):
        return q.copy()
    jac = manipulator_jacobian(model, q)
    jjt = jac @ jac.T + (damping ** 2) * np.eye(6)
    dq = jac.T @ np.linalg.solve(jjt, err)
    out = q.copy()
    out[MANIP] = clip_manip(model, q[MANIP] + dq)
    return out


def ee_error(model, q, target):
    """(position error in m, rotation error in rad) of fk(q).ee against target."""
    err = pose_error(_ee_matrix(model, q), _matrix(target))
    return float(np.linalg.norm(err[:3])), float(np.linalg.norm(err[3:]))


def track(model, q, target, iters, pos_tol, rot_tol, damping):
    """Iterate ik_step until within tolerance; returns (q, converged)."""
    for _ in range(iters + 1):
        pos, rot = ee_error(model, q, target)
        if pos <= pos_tol and rot <= rot_tol:
            return q, True
        q = ik_step(model, q, target, damping)
    return q, False


def solve_ik(model, q_seed, target, params, rng, accept=None):
    """
    Goal configuration for an ee target with the base frozen. Starts at the
    seed, then restarts from uniform random joint values. accept(q) may
    veto solutions (e.g. colliding ones). Returns None when nothing converges.
    """
    q_seed = np.asarray(q_seed, dtype=float)
    lo, hi = model.manip_lower, model.manip_upper
    starts = [q_seed.copy()]
    for _ in range(params.ik_restarts):
        q = q_seed.copy()
        q[MANIP] = rng.uniform(lo, hi)
        starts.append(q)
    for k, q0 in enumerate(starts):
        q, ok = track(model, q0, target, params.ik_solve_iters, params.pos_tol, params.rot_tol, params.damping)
        if ok and (accept is None or accept(q)):
            if k:
                logger.debug(f"IK converged after {k} restarts")
            return q
    logger.debug("IK did not converge from any start")
    return None
