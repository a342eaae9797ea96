"""
Triangle meshes: the TriMesh type, ASCII OBJ in/out (v and f records only)
and the synthetic product meshes used when no scanned asset is available.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from fsutil import atomic_write_text

logger = logging.getLogger("darkstore.mesh_io")


class ObjFormatError(ValueError):
    """Raised when an OBJ file cannot be parsed."""
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh has non-finite vertex coordinates")
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def tri_count(self):
        return int(len(self.triangles))

    def is_empty(self):
        return self.tri_count == 0

    def triangle_areas(self):
        if self.is_empty():
            return np.zeros(0)
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def degenerate_ratio(self, tol=1e-12):
        if self.is_empty():
            return 0.0
        return float(np.mean(self.triangle_areas() <= tol))

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diagonal(self):
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def scaled(self, s):
        return TriMesh(self.vertices * s, self.triangles.copy())


# ===== OBJ =====

def parse_obj(text, name="<string>"):
    verts, tris = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(verts[-1]) != 3:
                    raise ObjFormatError(f"{name}:{lineno}: vertex needs 3 coordinates")
            elif tag == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ObjFormatError(f"{name}:{lineno}: face needs at least 3 vertices")
                for k in range(1, len(idx) - 1):
                    tris.append([idx[0], idx[k], idx[k + 1]])
        except ValueError as e:
            if isinstance(e, ObjFormatError):
                raise
            raise ObjFormatError(f"{name}:{lineno}: {e}") from e
    try:
        return TriMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))
    except ValueError as e:
        raise ObjFormatError(f"{name}: {e}") from e


def read_obj(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_obj(f.read(), path)


def format_obj(mesh):
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    return "\n".join(lines) + "\n"


def write_obj(mesh, path):
    atomic_write_text(path, format_obj(mesh))


# ===== SYNTHETIC ASSETS =====

def _grid_quads(rows, cols, index):
    """Two triangles per quad of a (rows+1) x (cols+1) vertex grid."""
    tris = []
    for i in range(rows):
        for j in range(cols):
            a, b = index(i, j), index(i, j + 1)
            c, d = index(i + 1, j + 1), index(i + 1, j)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return tris


def box_mesh(size=(0.1, 0.06, 0.2), divisions=1, center=(0.0, 0.0, 0.0)):
    """Closed axis-aligned box with each face split into divisions^2 quads."""
    half = 0.5 * np.asarray(size, dtype=float)
    n = int(divisions)
    verts, tris = [], []
    s = np.linspace(-1.0, 1.0, n + 1)
    # (normal axis, sign, u axis, v axis); sign * (u x v) points outward
    faces = [(0, 1, 1, 2), (0, -1, 2, 1), (1, 1, 2, 0), (1, -1, 0, 2), (2, 1, 0, 1), (2, -1, 1, 0)]
    for axis, sign, u, v in faces:
        base = len(verts)
        for a in s:
            for b in s:
                p = np.zeros(3)
                p[axis] = sign
                p[u] = a
                p[v] = b
                verts.append(p * half)
        tris += _grid_quads(n, n, lambda i, j, base=base: base + i * (n + 1) + j)
    v = np.array(verts) + np.asarray(center, dtype=float)
    # merge the shared edge vertices so the surface is watertight
    keys = np.round(v / max(float(half.min()), 1e-12) * 1e9).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty(len(order), dtype=np.int64)
    remap[order] = np.arange(len(order))
    return TriMesh(v[first[order]], remap[inverse.reshape(-1)][np.array(tris)[:, ::-1]])


def revolve_mesh(profile, segments=64, cap=True):
    """
    Surface of revolution about +z. profile is a list of (radius, z) from
    bottom to top; end rings with radius > 0 are closed by fans.
    """
    profile = np.asarray(profile, dtype=float)
    k = int(segments)
    ang = 2.0 * math.pi * np.arange(k) / k
    verts = []
    for r, z in profile:
        for a in ang:
            verts.append((r * math.cos(a), r * math.sin(a), z))
    rows = len(profile) - 1
    tris = []
    for i in range(rows):
        for j in range(k):
            a = i * k + j
            b = i * k + (j + 1) % k
            c = (i + 1) * k + (j + 1) % k
            d = (i + 1) * k + j
            tris.append((a, b, c))
            tris.append((a, c, d))
    if cap:
        if profile[0][0] > 0:
            bottom = len(verts)
            verts.append((0.0, 0.0, profile[0][1]))
            tris += [(bottom, (j + 1) % k, j) for j in range(k)]
        if profile[-1][0] > 0:
            top = len(verts)
            verts.append((0.0, 0.0, profile[-1][1]))
            off = rows * k
            tris += [(top, off + j, off + (j + 1) % k) for j in range(k)]
    return TriMesh(np.array(verts), np.array(tris))


def cylinder_mesh(radius=0.033, height=0.12, segments=64, rings=1):
    zs = np.linspace(0.0, height, rings + 1)
    return revolve_mesh([(radius, z) for z in zs], segments)


def bottle_mesh(radius=0.04, height=0.25, segments=96, rings=48):
    """Body, shoulder and neck of a plastic bottle."""
    profile = []
    for z in np.linspace(0.0, height, rings + 1):
        t = z / height
        if t < 0.6:
            r = radius
        elif t < 0.8:
            r = radius * (1.0 - 0.65 * math.sin(0.5 * math.pi * (t - 0.6) / 0.2))
        else:
            r = 0.35 * radius
        profile.append((r, z))
    return revolve_mesh(profile, segments)


def uv_sphere(radius=0.05, n_lat=50, n_lon=100):
    verts = [(0.0, 0.0, -radius)]
    for i in range(1, n_lat):
        phi = -0.5 * math.pi + math.pi * i / n_lat
        for j in range(n_lon):
            th = 2.0 * math.pi * j / n_lon
            verts.append((radius * math.cos(phi) * math.cos(th), radius * math.cos(phi) * math.sin(th),
                           radius * math.sin(phi)))
    verts.append((0.0, 0.0, radius))
    top = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + j % n_lon

    tris = [(0, ring(1, j + 1), ring(1, j)) for j in range(n_lon)]
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j + 1), ring(i + 1, j)
            tris.append((a, b, c))
            tris.append((a, c, d))
    tris += [(top, ring(n_lat - 1, j), ring(n_lat - 1, j + 1)) for j in range(n_lon)]
    return TriMesh(np.array(verts), np.array(tris))


def l_shape_mesh(size=(0.2, 0.2, 0.1), notch=0.5, divisions=20):
    """L-shaped extrusion: a box with one quadrant of its footprint removed."""
    sx, sy, sz = size
    parts = [
        box_mesh((sx, sy * notch, sz), divisions, (0.5 * sx, 0.5 * sy * notch, 0.5 * sz)),
        box_mesh((sx * notch, sy * (1 - notch), sz), divisions,
                 (0.5 * sx * notch, sy * notch + 0.5 * sy * (1 - notch), 0.5 * sz)),
    ]
    verts, tris, off = [], [], 0
    for m in parts:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    return TriMesh(np.vstack(verts), np.vstack(tris))


SYNTHETIC_ASSETS = {
    "box": lambda: box_mesh((0.1, 0.06, 0.2), divisions=29),
    "bottle": lambda: bottle_mesh(),
    "can": lambda: cylinder_mesh(0.033, 0.12, segments=128, rings=38),
    "sphere": lambda: uv_sphere(),
    "l_shape": lambda: l_shape_mesh(divisions=20),
}


def synthetic_mesh(name):
    try:
        return SYNTHETIC_ASSETS[name]()
    except KeyError:
        raise KeyError(f"unknown synthetic asset '{name}', choose from {sorted(SYNTHETIC_ASSETS)}") from None
