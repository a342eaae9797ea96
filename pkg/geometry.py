"""
Planar and spatial primitives shared by the store generator and the planner.

Points are numpy arrays (shape (2,) or (3,), meters). Polygons are closed and
counter-clockwise; boundary points count as inside and touching boxes count as
overlapping, so every predicate here errs on the conservative side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

EPS_GEO = 1e-9


class GeometryError(ValueError):
    """Raised for malformed geometric input."""
    pass


class InvalidParameterError(GeometryError):
    """Raised when a numeric parameter is outside its valid range."""
    pass


def vec2(x, y):
    return np.array([float(x), float(y)])


def vec3(x, y, z):
    return np.array([float(x), float(y), float(z)])


def wrap_angle(a):
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def rot2(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


# ===== POLYGONS =====

def _signed_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_cross(p1, p2, q1, q2):
    """True if the open segments p1p2 and q1q2 properly intersect."""
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return (d1 * d2 < -EPS_GEO) and (d3 * d4 < -EPS_GEO)


@dataclass(frozen=True, eq=False)
class Polygon:
    """Closed simple polygon; vertex P connects back to vertex 1."""
    vertices: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if len(pts) < 3:
            raise GeometryError(f"polygon needs at least 3 vertices, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("polygon has non-finite coordinates")
        area = _signed_area(pts)
        if abs(area) <= EPS_GEO:
            raise GeometryError("polygon has zero area")
        if area < 0:
            pts = pts[::-1].copy()
        pts.setflags(write=False)
        object.__setattr__(self, "vertices", pts)

    def __len__(self):
        return len(self.vertices)

    def edges(self):
        """Yield (p_i, p_next) pairs, closing the loop."""
        pts = self.vertices
        for i in range(len(pts)):
            yield pts[i], pts[(i + 1) % len(pts)]

    def edge_lengths(self):
        pts = self.vertices
        return np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)

    def perimeter(self):
        return float(np.sum(self.edge_lengths()))

    def area(self):
        return _signed_area(self.vertices)

    def bounds(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def is_simple(self):
        pts = self.vertices
        n = len(pts)
        for i in range(n):
            a1, a2 = pts[i], pts[(i + 1) % n]
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                if _segments_cross(a1, a2, pts[j], pts[(j + 1) % n]):
                    return False
        return True

    def transformed(self, yaw, offset, pivot=(0.0, 0.0)):
        """Rotate by yaw about pivot, then translate by offset."""
        pivot = np.asarray(pivot, dtype=float)
        pts = (self.vertices - pivot) @ rot2(yaw).T + pivot + np.asarray(offset, dtype=float)
        return Polygon(pts)

    def to_list(self):
        return [[float(x), float(y)] for x, y in self.vertices]

    @classmethod
    def rectangle(cls, width, depth, origin=(0.0, 0.0)):
        x0, y0 = origin
        return cls(np.array([[x0, y0], [x0 + width, y0],
                             [x0 + width, y0 + depth], [x0, y0 + depth]], dtype=float))


def resample_polygon(poly, max_edge):
    """
    Split every edge longer than max_edge into equal pieces.
    Original vertices are kept; new ones lie on the original edges.
    """
    if not (max_edge > 0) or not math.isfinite(max_edge):
        raise InvalidParameterError(f"max edge length must be positive, got {max_edge}")
    out = []
    for p, q in poly.edges():
        length = float(np.linalg.norm(q - p))
        k = max(1, math.ceil(length / max_edge))
        while length / k > max_edge:
            k += 1
        for j in range(k):
            out.append(p + (q - p) * (j / k))
    return Polygon(np.array(out))


def point_segment_distance(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom <= 0.0:
        return float(np.linalg.norm(p - a))
    t = min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + t * ab)))


def polygon_boundary_distance(points, poly):
    """Vectorized distance from each point (n, 2) to the polygon boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = poly.vertices
    b = np.roll(a, -1, axis=0)
    ab = b - a
    denom = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nij,ij->ni", ap, ab) / denom, 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.linalg.norm(pts[:, None, :] - closest, axis=2).min(axis=1)


def points_in_polygon(points, poly):
    """Vectorized point_in_polygon over an (n, 2) array."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0:1], pts[:, 1:2]
    a = poly.vertices
    b = np.roll(a, -1, axis=0)
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    straddle = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax + (y - ay) * (bx - ax) / (by - ay)
    crossings = np.sum(straddle & (x < x_cross), axis=1)
    inside = (crossings % 2) == 1
    on_edge = polygon_boundary_distance(pts, poly) <= EPS_GEO
    return inside | on_edge


def point_in_polygon(p, poly):
    """Ray-crossing test; points on the boundary (within 1e-9) count as inside."""
    return bool(points_in_polygon(np.asarray(p, dtype=float)[None, :], poly)[0])


# ===== ORIENTED BOXES =====

@dataclass(frozen=True, eq=False)
class Obb2:
    center: np.ndarray
    half_extents: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(2)
        h = np.asarray(self.half_extents, dtype=float).reshape(2)
        if not np.all(h > 0):
            raise GeometryError(f"box half extents must be positive, got {h.tolist()}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "yaw", float(self.yaw))

    def axes(self):
        """Unit local x and y axes in the world frame (rows)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, s], [-s, c]])

    def corners(self):
        hx, hy = self.half_extents
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        return local @ rot2(self.yaw).T + self.center

    def inflated(self, dx, dy=None):
        dy = dx if dy is None else dy
        return Obb2(self.center, self.half_extents + np.array([dx, dy]), self.yaw)

    def to_polygon(self):
        return Polygon(self.corners())

    def to_local(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts - self.center) @ rot2(self.yaw)

    def contains(self, points, tol=EPS_GEO):
        local = self.to_local(points)
        return np.all(np.abs(local) <= self.half_extents + tol, axis=1)


def obb_overlap(a, b, margin=0.0):
    """
    Separating-axis test over the four face normals.
    Boxes closer than margin count as overlapping; touching boxes overlap.
    """
    d = b.center - a.center
    axes_a = a.axes()
    axes_b = b.axes()
    for axis in (axes_a[0], axes_a[1], axes_b[0], axes_b[1]):
        ra = a.half_extents[0] * abs(axes_a[0] @ axis) + a.half_extents[1] * abs(axes_a[1] @ axis)
        rb = b.half_extents[0] * abs(axes_b[0] @ axis) + b.half_extents[1] * abs(axes_b[1] @ axis)
        if abs(float(d @ axis)) - (ra + rb) > margin + EPS_GEO:
            return False
    return True


def obb_overlap_many(box, centers, half_extents, yaws, margin=0.0):
    """
    Vectorized obb_overlap of one box against n others given as arrays.
    Returns a boolean array of length n.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if len(centers) == 0:
        return np.zeros(0, dtype=bool)
    half_extents = np.asarray(half_extents, dtype=float).reshape(-1, 2)
    yaws = np.asarray(yaws, dtype=float).reshape(-1)
    c, s = np.cos(yaws), np.sin(yaws)
    bx = np.stack([c, s], axis=1)
    by = np.stack([-s, c], axis=1)
    ax = box.axes()
    d = centers - box.center
    separated = np.zeros(len(centers), dtype=bool)
    candidate_axes = [np.broadcast_to(ax[0], bx.shape), np.broadcast_to(ax[1], bx.shape), bx, by]
    for axis in candidate_axes:
        ra = box.half_extents[0] * np.abs(axis @ ax[0]) + box.half_extents[1] * np.abs(axis @ ax[1])
        rb = (half_extents[:, 0] * np.abs(np.einsum("ij,ij->i", bx, axis))
              + half_extents[:, 1] * np.abs(np.einsum("ij,ij->i", by, axis)))
        dist = np.abs(np.einsum("ij,ij->i", d, axis))
        separated |= (dist - (ra + rb)) > margin + EPS_GEO
    return ~separated


def obb_in_polygon(box, poly):
    """True if the box lies inside the polygon (boundary contact allowed)."""
    corners = box.corners()
    if not np.all(points_in_polygon(corners, poly)):
        return False
    # a polygon vertex strictly inside the box means a notch cuts into it
    local = box.to_local(poly.vertices)
    if np.any(np.all(np.abs(local) < box.half_extents - EPS_GEO, axis=1)):
        return False
    for i in range(4):
        p1, p2 = corners[i], corners[(i + 1) % 4]
        for q1, q2 in poly.edges():
            if _segments_cross(p1, p2, q1, q2):
                return False
    return True


@dataclass(frozen=True, eq=False)
class Obb3:
    """Box with a yaw-only orientation: an Obb2 footprint plus a z-interval."""
    center: np.ndarray
    half_extents: np.ndarray
    yaw: float = 0.0
    label: str = ""

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        h = np.asarray(self.half_extents, dtype=float).reshape(3)
        if not np.all(h > 0):
            raise GeometryError(f"box half extents must be positive, got {h.tolist()}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "yaw", float(self.yaw))

    @classmethod
    def from_footprint(cls, footprint, z_lo, z_hi, label=""):
        return cls(np.array([footprint.center[0], footprint.center[1], 0.5 * (z_lo + z_hi)]),
                   np.array([footprint.half_extents[0], footprint.half_extents[1], 0.5 * (z_hi - z_lo)]),
                   footprint.yaw, label)

    def footprint(self):
        return Obb2(self.center[:2], self.half_extents[:2], self.yaw)

    def to_local(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts - self.center
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=1)

    def contains(self, point, tol=EPS_GEO):
        return bool(np.all(np.abs(self.to_local(point)[0]) <= self.half_extents + tol))


def _box_signed_distance(local, half):
    q = np.abs(local) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def sphere_obb_clearance(center, radius, box):
    """Signed distance from the sphere surface to the box; negative means penetration."""
    if not radius > 0:
        raise InvalidParameterError(f"sphere radius must be positive, got {radius}")
    local = box.to_local(np.asarray(center, dtype=float))[0]
    return float(_box_signed_distance(local, box.half_extents)) - float(radius)


def spheres_boxes_clearance(centers, radii, box_centers, box_half, box_yaws):
    """
    Vectorized clearance matrix (n_spheres, n_boxes) for yaw-only boxes.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    radii = np.asarray(radii, dtype=float).reshape(-1)
    if len(box_centers) == 0:
        return np.full((len(centers), 0), np.inf)
    d = centers[:, None, :] - box_centers[None, :, :]
    c, s = np.cos(box_yaws)[None, :], np.sin(box_yaws)[None, :]
    local = np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1], d[..., 2]], axis=-1)
    return _box_signed_distance(local, box_half[None, :, :]) - radii[:, None]


# ===== POSES =====

@dataclass(frozen=True, eq=False)
class Pose3:
    """Rigid pose: position in meters and a unit quaternion (x, y, z, w)."""
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > 1e-6:
            raise GeometryError(f"orientation quaternion is not unit (norm {n})")
        # unit to working precision keeps its bits so stored poses reload exactly
        if abs(n - 1.0) > 1e-12:
            q = q / n
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise GeometryError("pose has non-finite components")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        q = Rotation.from_matrix(m[:3, :3]).as_quat()
        return cls(m[:3, 3].copy(), q)

    @classmethod
    def from_xyz_yaw(cls, x, y, z, yaw):
        return cls(vec3(x, y, z), Rotation.from_euler("z", yaw).as_quat())

    @classmethod
    def from_xyz_rpy(cls, xyz, rpy):
        return cls(np.asarray(xyz, dtype=float), Rotation.from_euler("xyz", rpy).as_quat())

    def rotation(self):
        return Rotation.from_quat(self.orientation)

    def rotation_matrix(self):
        return self.rotation().as_matrix()

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.position
        return m

    def compose(self, other):
        """self ∘ other"""
        return Pose3.from_matrix(self.matrix() @ other.matrix())

    def inverse(self):
        r = self.rotation_matrix()
        m = np.eye(4)
        m[:3, :3] = r.T
        m[:3, 3] = -r.T @ self.position
        return Pose3.from_matrix(m)

    def transform_points(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.rotation_matrix().T + self.position

    def yaw(self):
        r = self.rotation_matrix()
        return math.atan2(r[1, 0], r[0, 0])

    def angle_to(self, other):
        """Rotation angle (radians) between two orientations."""
        rel = self.rotation().inv() * other.rotation()
        return float(np.linalg.norm(rel.as_rotvec()))

    def to_list(self):
        return [float(v) for v in self.position] + [float(v) for v in self.orientation]

    @classmethod
    def from_list(cls, values):
        values = [float(v) for v in values]
        return cls(np.array(values[:3]), np.array(values[3:7]))
