"""
Store tensor field: basis tensors from polygon edges, exponentially weighted
aggregation, a cached lattice and major-direction extraction.

A tensor [[a, b], [b, -a]] is kept as the two scalars (a, b), so every value
is traceless and symmetric by construction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from geometry import InvalidParameterError

logger = logging.getLogger("darkstore.tensor_field")

EPS_DEGENERATE = 1e-6
_CHUNK = 4096


class DegenerateEdgeError(ValueError):
    """Raised when an edge has zero length."""
    pass


class EmptyFieldError(ValueError):
    """Raised when a field is requested from no polygons."""
    pass


class FieldOutOfBoundsError(ValueError):
    """Raised when the field is queried outside its lattice."""
    pass


class DegenerateTensorError(ValueError):
    """Raised when a tensor is too small to define a direction."""
    pass


@dataclass(frozen=True)
class SymTensor2:
    a: float
    b: float

    def __add__(self, other):
        return SymTensor2(self.a + other.a, self.b + other.b)

    def scaled(self, k):
        return SymTensor2(self.a * k, self.b * k)

    def norm(self):
        return math.hypot(self.a, self.b)

    def matrix(self):
        return np.array([[self.a, self.b], [self.b, -self.a]])


@dataclass(frozen=True)
class BasisTensor:
    anchor: tuple
    magnitude: float
    angle: float

    def tensor(self):
        return SymTensor2(self.magnitude * math.cos(2.0 * self.angle),
                          self.magnitude * math.sin(2.0 * self.angle))


def basis_from_edge(p_i, p_next):
    """
    Basis tensor of the edge p_i -> p_next, anchored at p_i.
    The angle is atan2 of the edge direction, in (-pi, pi].
    """
    p_i = np.asarray(p_i, dtype=float)
    p_next = np.asarray(p_next, dtype=float)
    u = p_next - p_i
    length = float(np.hypot(u[0], u[1]))
    if length == 0.0:
        raise DegenerateEdgeError(f"zero-length edge at {p_i.tolist()}")
    theta = math.atan2(u[1], u[0])
    if theta == -math.pi:
        theta = math.pi
    return BasisTensor((float(p_i[0]), float(p_i[1])), length, theta)


def _basis_arrays(bases):
    anchors = np.array([b.anchor for b in bases], dtype=float).reshape(-1, 2)
    coef = np.array([[b.tensor().a, b.tensor().b] for b in bases], dtype=float).reshape(-1, 2)
    return anchors, coef


def _aggregate(points, anchors, coef, decay):
    """sum_j exp(-d |p - p_j|) T_j for each row of points; returns (n, 2)."""
    points = np.atleast_2d(points)
    out = np.zeros((len(points), 2))
    for start in range(0, len(points), _CHUNK):
        chunk = points[start:start + _CHUNK]
        dist = np.linalg.norm(chunk[:, None, :] - anchors[None, :, :], axis=2)
        out[start:start + _CHUNK] = np.exp(-decay * dist) @ coef
    return out


@dataclass(frozen=True, eq=False)
class TensorField:
    """
    Aggregated field over a store rectangle. The lattice is a cache of the
    analytic sum; the basis list is kept for exact re-evaluation.
    """
    bases: tuple
    decay: float
    resolution: float
    origin: tuple
    shape: tuple
    grid: np.ndarray

    def lattice_points(self):
        nx, ny = self.shape
        xs = self.origin[0] + self.resolution * np.arange(nx)
        ys = self.origin[1] + self.resolution * np.arange(ny)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def extent(self):
        nx, ny = self.shape
        return (self.origin[0], self.origin[1],
                self.origin[0] + self.resolution * (nx - 1),
                self.origin[1] + self.resolution * (ny - 1))

    def analytic(self, p):
        if not self.bases:
            return SymTensor2(0.0, 0.0)
        anchors, coef = _basis_arrays(self.bases)
        a, b = _aggregate(np.asarray(p, dtype=float)[None, :], anchors, coef, self.decay)[0]
        return SymTensor2(float(a), float(b))


def build_field(polygons, decay, resolution, store_rect):
    """
    Aggregate the basis tensors of every polygon edge on a lattice that covers
    store_rect = (xmin, ymin, xmax, ymax) at the given resolution.
    Polygons are expected to be resampled already.
    """
    if not polygons:
        raise EmptyFieldError("tensor field needs at least one polygon")
    if not decay > 0:
        raise InvalidParameterError(f"decay must be positive, got {decay}")
    if not resolution > 0:
        raise InvalidParameterError(f"grid resolution must be positive, got {resolution}")

    bases = []
    for poly in polygons:
        for p, q in poly.edges():
            bases.append(basis_from_edge(p, q))

    xmin, ymin, xmax, ymax = store_rect
    nx = int(math.ceil((xmax - xmin) / resolution - 1e-9)) + 1
    ny = int(math.ceil((ymax - ymin) / resolution - 1e-9)) + 1
    field = TensorField(tuple(bases), float(decay), float(resolution),
                        (float(xmin), float(ymin)), (nx, ny), np.zeros((nx, ny, 2)))
    anchors, coef = _basis_arrays(bases)
    pts = field.lattice_points().reshape(-1, 2)
    field.grid[...] = _aggregate(pts, anchors, coef, decay).reshape(nx, ny, 2)
    field.grid.setflags(write=False)
    logger.debug(f"Tensor field built: {len(bases)} bases on a {nx}x{ny} lattice (h={resolution})")
    return field


def eval_field(field, p, analytic=False):
    """Bilinear interpolation of the lattice (or the exact sum if analytic)."""
    p = np.asarray(p, dtype=float)
    x0, y0, x1, y1 = field.extent()
    tol = 1e-9
    if p[0] < x0 - tol or p[0] > x1 + tol or p[1] < y0 - tol or p[1] > y1 + tol:
        raise FieldOutOfBoundsError(f"point {p.tolist()} outside field extent {(x0, y0, x1, y1)}")
    if analytic:
        return field.analytic(p)
    nx, ny = field.shape
    h = field.resolution
    fx = min(max((p[0] - x0) / h, 0.0), nx - 1)
    fy = min(max((p[1] - y0) / h, 0.0), ny - 1)
    i = min(int(math.floor(fx)), max(nx - 2, 0))
    j = min(int(math.floor(fy)), max(ny - 2, 0))
    tx = fx - i
    ty = fy - j
    g = field.grid
    i1 = min(i + 1, nx - 1)
    j1 = min(j + 1, ny - 1)
    v = ((1 - tx) * (1 - ty) * g[i, j] + tx * (1 - ty) * g[i1, j]
         + (1 - tx) * ty * g[i, j1] + tx * ty * g[i1, j1])
    return SymTensor2(float(v[0]), float(v[1]))


def major_direction(t):
    """Major eigenvector angle of [[a, b], [b, -a]], in [0, pi)."""
    if t.norm() <= EPS_DEGENERATE:
        raise DegenerateTensorError(f"tensor ({t.a}, {t.b}) is degenerate")
    psi = 0.5 * math.atan2(t.b, t.a)
    psi = math.fmod(psi, math.pi)
    if psi < 0.0:
        psi += math.pi
    if psi >= math.pi:
        psi -= math.pi
    return psi


def field_glyphs(field):
    """(x, y, psi) for every lattice point with a non-degenerate tensor."""
    glyphs = []
    pts = field.lattice_points()
    nx, ny = field.shape
    for i in range(nx):
        for j in range(ny):
            t = SymTensor2(float(field.grid[i, j, 0]), float(field.grid[i, j, 1]))
            if t.norm() <= EPS_DEGENERATE:
                continue
            glyphs.append((float(pts[i, j, 0]), float(pts[i, j, 1]), major_direction(t)))
    return glyphs
