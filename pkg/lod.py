"""
Level-of-detail selection for product meshes.

Candidates (cluster decimations, box and cylinder fits, external remeshes)
are scored by Chamfer distance against the original and by triangle count.
The chosen LOD is the Pareto-optimal candidate with the smallest sum of
relative distance (w.r.t. the largest candidate distance) and relative
triangle count (w.r.t. the original).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

import seeding
from mesh_io import TriMesh

logger = logging.getLogger("darkstore.lod")

# share of zero-area triangles a candidate may carry
MAX_DEGENERATE_RATIO = 0.01


class EmptyMeshError(ValueError):
    """Raised when an operation needs triangles and the mesh has none."""
    pass


class EmptyPointSetError(ValueError):
    """Raised when a Chamfer distance is requested for an empty point set."""
    pass


class LodMethod(Enum):
    ORIGINAL = "original"
    CLUSTER = "cluster"
    BOX_FIT = "box_fit"
    CYLINDER_FIT = "cylinder_fit"
    EXTERNAL = "external"


@dataclass(frozen=True, eq=False)
class LodCandidate:
    mesh: TriMesh
    method: LodMethod
    tag: str
    tri_count: int
    chamfer: float = float("nan")

    @classmethod
    def of(cls, mesh, method, tag=None):
        return cls(mesh, method, tag or method.value, mesh.tri_count)


@dataclass(frozen=True)
class LodScore:
    rel_dist: float
    rel_tris: float

    @property
    def total(self):
        return self.rel_dist + self.rel_tris


@dataclass(frozen=True)
class LodParams:
    n_samples: int = 8192
    cell_fractions: tuple = (0.005, 0.01, 0.02, 0.04, 0.08, 0.16, 0.32)
    cylinder_segments: int = 16
    seed: int = 0


# ===== SAMPLING AND DISTANCE =====

def sample_surface_points(mesh, n, rng):
    """n points, triangle chosen proportionally to area, uniform inside it."""
    if mesh.is_empty():
        raise EmptyMeshError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError(f"sample count must be at least 1, got {n}")
    areas = mesh.triangle_areas()
    total = float(areas.sum())
    if total <= 0.0:
        raise EmptyMeshError("mesh has zero surface area")
    idx = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.triangles[idx]
    a = mesh.vertices[tri[:, 0]]
    b = mesh.vertices[tri[:, 1]]
    c = mesh.vertices[tri[:, 2]]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def chamfer_distance(a, b):
    """Mean nearest-neighbour distance A->B plus B->A (un-squared)."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptyPointSetError("chamfer distance needs two non-empty point sets")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(np.mean(d_ab) + np.mean(d_ba))


# ===== CANDIDATE GENERATORS =====

def decimate_cluster(mesh, cell, origin=None):
    """
    Vertex clustering: every vertex moves to the mean of its grid cell,
    collapsed and duplicate triangles are dropped. Cell origin defaults to
    the bounding-box minimum.
    """
    if not cell > 0:
        raise ValueError(f"cluster cell must be positive, got {cell}")
    if mesh.is_empty():
        return mesh
    lo = mesh.bounds()[0] if origin is None else np.asarray(origin, dtype=float)
    keys = np.floor((mesh.vertices - lo) / cell).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(first)
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    cluster = rank[inverse]

    n_clusters = len(order)
    sums = np.zeros((n_clusters, 3))
    np.add.at(sums, cluster, mesh.vertices)
    counts = np.bincount(cluster, minlength=n_clusters)[:, None]
    verts = sums / counts

    tris = cluster[mesh.triangles]
    keep = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    tris = tris[keep]
    if len(tris):
        _, uniq = np.unique(np.sort(tris, axis=1), axis=0, return_index=True)
        tris = tris[np.sort(uniq)]
    used = np.unique(tris)
    if len(used) < n_clusters:
        remap = -np.ones(n_clusters, dtype=np.int64)
        remap[used] = np.arange(len(used))
        verts = verts[used]
        tris = remap[tris]
    return TriMesh(verts, tris.reshape(-1, 3))


def _box_triangles():
    return np.array([
        [0, 2, 1], [0, 3, 2],  # z-
        [4, 5, 6], [4, 6, 7],  # z+
        [0, 1, 5], [0, 5, 4],  # y-
        [2, 3, 7], [2, 7, 6],  # y+
        [1, 2, 6], [1, 6, 5],  # x+
        [3, 0, 4], [3, 4, 7],  # x-
    ])


def fit_primitive(mesh, kind, segments=16):
    """Axis-aligned box (12 triangles) or vertical cylinder (4 * segments triangles)."""
    if mesh.is_empty():
        raise EmptyMeshError("cannot fit a primitive to an empty mesh")
    lo, hi = mesh.bounds()
    kind = LodMethod(kind) if isinstance(kind, LodMethod) else {"box": LodMethod.BOX_FIT,
                                                                "cylinder": LodMethod.CYLINDER_FIT}[kind]
    if kind == LodMethod.BOX_FIT:
        x0, y0, z0 = lo
        x1, y1, z1 = hi
        verts = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                          [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]])
        return TriMesh(verts, _box_triangles())

    # axis through the centre of the footprint's bounding rectangle
    cx, cy = 0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])
    radius = float(np.max(np.hypot(mesh.vertices[:, 0] - cx, mesh.vertices[:, 1] - cy)))
    k = int(segments)
    ang = 2.0 * math.pi * np.arange(k) / k
    ring = np.stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(k, lo[2])])
    top = np.column_stack([ring, np.full(k, hi[2])])
    verts = np.vstack([bottom, top, [[cx, cy, lo[2]], [cx, cy, hi[2]]]])
    cb, ct = 2 * k, 2 * k + 1
    tris = []
    for j in range(k):
        j1 = (j + 1) % k
        tris += [(j, j1, k + j1), (j, k + j1, k + j), (cb, j1, j), (ct, k + j, k + j1)]
    return TriMesh(verts, np.array(tris))


def generate_candidates(mesh, params=None, external=()):
    """
    Original, cluster decimations at fractions of the bounding-box diagonal,
    box and cylinder fits, and externally produced meshes given as
    (name, TriMesh). Empty candidates, ones larger than the original and ones
    above MAX_DEGENERATE_RATIO zero-area triangles are dropped.
    """
    params = params or LodParams()
    if mesh.is_empty():
        raise EmptyMeshError("cannot build LOD candidates for an empty mesh")
    out = [LodCandidate.of(mesh, LodMethod.ORIGINAL)]
    diag = mesh.diagonal()
    for frac in params.cell_fractions:
        out.append(LodCandidate.of(decimate_cluster(mesh, frac * diag), LodMethod.CLUSTER, f"cluster({frac:g})"))
    out.append(LodCandidate.of(fit_primitive(mesh, "box"), LodMethod.BOX_FIT))
    out.append(LodCandidate.of(fit_primitive(mesh, "cylinder", params.cylinder_segments), LodMethod.CYLINDER_FIT))
    for name, ext in external:
        out.append(LodCandidate.of(ext, LodMethod.EXTERNAL, f"external:{name}"))
    if mesh.degenerate_ratio() > MAX_DEGENERATE_RATIO:
        logger.warning(f"Input mesh has {mesh.degenerate_ratio():.1%} zero-area triangles")

    kept = []
    for c in out:
        if c.mesh.is_empty() or c.mesh.triangle_areas().sum() <= 0.0:
            logger.debug(f"Dropping degenerate LOD candidate {c.tag}")
        elif c.tri_count > mesh.tri_count:
            logger.debug(f"Dropping LOD candidate {c.tag}: {c.tri_count} > {mesh.tri_count} triangles")
        elif c.method != LodMethod.ORIGINAL and c.mesh.degenerate_ratio() > MAX_DEGENERATE_RATIO:
            logger.debug(f"Dropping LOD candidate {c.tag}: {c.mesh.degenerate_ratio():.1%} zero-area triangles")
        else:
            kept.append(c)
    return kept


def score_candidates(original, candidates, n_samples, rng):
    """Chamfer distance of every candidate against one shared sample of the original."""
    reference = sample_surface_points(original, n_samples, rng)
    scored = []
    for c in candidates:
        if c.method == LodMethod.ORIGINAL:
            scored.append(replace(c, chamfer=0.0))
        else:
            pts = sample_surface_points(c.mesh, n_samples, rng)
            scored.append(replace(c, chamfer=chamfer_distance(reference, pts)))
    return scored


# ===== SELECTION =====

def _dominates(a, b):
    return (a.chamfer <= b.chamfer and a.tri_count <= b.tri_count
            and (a.chamfer < b.chamfer or a.tri_count < b.tri_count))


def pareto_front(candidates):
    """Candidates not dominated in (chamfer, tri_count); ties are kept."""
    if not candidates:
        raise ValueError("pareto_front needs at least one candidate")
    return [c for c in candidates if not any(_dominates(o, c) for o in candidates if o is not c)]


def lod_scores(candidates):
    """LodScore per candidate, normalized over the whole candidate set."""
    max_chamfer = max(c.chamfer for c in candidates)
    originals = [c.tri_count for c in candidates if c.method == LodMethod.ORIGINAL]
    base_tris = originals[0] if originals else max(c.tri_count for c in candidates)
    scores = []
    for c in candidates:
        rel_dist = c.chamfer / max_chamfer if max_chamfer > 0 else 0.0
        scores.append(LodScore(rel_dist, c.tri_count / base_tris if base_tris else 0.0))
    return scores


def select_lod(candidates):
    """Pareto candidate minimizing rel_dist + rel_tris; ties by triangles, then tag."""
    if not candidates:
        raise ValueError("select_lod needs at least one candidate")
    scores = dict(zip(map(id, candidates), lod_scores(candidates)))
    front = pareto_front(candidates)
    return min(front, key=lambda c: (scores[id(c)].total, c.tri_count, c.tag))


def optimize_asset(asset_id, mesh, params=None, seed=None, external=()):
    """Generate, score and select. Returns (selected candidate, report record)."""
    params = params or LodParams()
    root = params.seed if seed is None else seed
    candidates = generate_candidates(mesh, params, external)
    scored = score_candidates(mesh, candidates, params.n_samples, seeding.generator(root, f"lod/{asset_id}"))
    best = select_lod(scored)
    score = dict(zip(map(id, scored), lod_scores(scored)))[id(best)]
    record = {
        "asset": asset_id,
        "method": best.tag,
        "tri_before": mesh.tri_count,
        "tri_after": best.tri_count,
        "chamfer": best.chamfer,
        "rel_dist": score.rel_dist,
        "rel_tris": score.rel_tris,
    }
    logger.info(f"LOD for {asset_id}: {best.tag} ({mesh.tri_count} -> {best.tri_count} triangles, "
                f"chamfer {best.chamfer:.5f} m)")
    return best, record


# ===== SCENE BUDGET =====

def nearest_fixtures(layout, point, k=1):
    """Ids of the k fixtures whose footprint is closest to point (ties by id)."""
    p = np.asarray(point, dtype=float)[:2]
    dists = []
    for placement in layout.placements:
        box = placement.footprint(layout.template_of(placement))
        q = np.abs(box.to_local(p)[0]) - box.half_extents
        dists.append((float(np.linalg.norm(np.maximum(q, 0.0))), placement.id))
    dists.sort()
    return [fid for _, fid in dists[:k]]


def scene_triangle_budget(arrangement, tri_counts, near_fixture_ids):
    """
    Triangles in the scene when only items on the near fixtures keep their
    original mesh. tri_counts maps product id -> (original, selected).
    Returns (optimized_total, original_total).
    """
    near = set(near_fixture_ids)
    optimized = original = 0
    for item in arrangement.items:
        full, reduced = tri_counts[item.product_id]
        original += full
        optimized += full if item.fixture_id in near else reduced
    return optimized, original
