"""
Fixture layout generation.

Stage 1 seeds non-shelf fixtures (pallets, boxes, fridges) by rejection
sampling. Stage 2 builds the store tensor field from the walls and the seeded
footprints. Stage 3 places shelving units in a horizontal pass (row by row)
and a vertical pass (column by column) wherever the local field direction
matches the pass axis, keeping every placement collision-free and the store
navigable from the door.
"""

from __future__ import annotations

import logging
import math
import dataclasses
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy import ndimage

import seeding
from geometry import (
    GeometryError, Obb2, Polygon, obb_in_polygon, obb_overlap, obb_overlap_many,
    points_in_polygon, polygon_boundary_distance,
    resample_polygon, rot2, wrap_angle,
)
from tensor_field import DegenerateTensorError, build_field, eval_field, major_direction

logger = logging.getLogger("darkstore.layout")


class SeedingFailedError(RuntimeError):
    """Raised when rejection sampling could not place a single seed fixture."""
    pass


class FixtureKind(Enum):
    SHELF = "shelf"
    FRIDGE = "fridge"
    SHOWCASE = "showcase"
    PALLET = "pallet"
    BOX = "box"


class Provenance(Enum):
    SEEDED = "seeded"
    HORIZONTAL = "horizontal_pass"
    VERTICAL = "vertical_pass"


class PassAxis(Enum):
    HORIZONTAL = 0.0
    VERTICAL = math.pi / 2


# ===== TEMPLATES =====

@dataclass(frozen=True)
class Board:
    """One board; z is the top face, gap the clear height above it, rect (x0, y0, x1, y1) in the fixture frame with the front at +y."""
    index: int
    z: float
    rect: tuple
    gap: float | None
    thickness: float = 0.02


@dataclass(frozen=True)
class FixtureTemplate:
    id: str
    kind: FixtureKind
    half_extents: tuple
    height: float
    boards: tuple = ()
    doors: int = 0

    def __post_init__(self):
        hx, hy = self.half_extents
        if not (hx > 0 and hy > 0 and self.height > 0):
            raise GeometryError(f"template {self.id}: footprint and height must be positive")
        zs = [b.z for b in self.boards]
        if any(z1 <= z0 for z0, z1 in zip(zs, zs[1:])):
            raise GeometryError(f"template {self.id}: board heights must be strictly increasing")
        for b in self.boards:
            if b.gap is not None and not b.gap > 0:
                raise GeometryError(f"template {self.id}: board {b.index} gap must be positive")

    @property
    def has_boards(self):
        return bool(self.boards)


# ===== STORE AND PLACEMENTS =====

@dataclass(frozen=True, eq=False)
class StoreSpec:
    width: float
    depth: float
    walls: Polygon | None = None
    doors: tuple = ()

    def __post_init__(self):
        if not (self.width > 0 and self.depth > 0):
            raise GeometryError(f"store dimensions must be positive, got {self.width}x{self.depth}")
        if self.walls is None:
            object.__setattr__(self, "walls", Polygon.rectangle(self.width, self.depth))
        if not self.walls.is_simple():
            raise GeometryError("store wall polygon is not simple")
        doors = tuple((tuple(map(float, a)), tuple(map(float, b))) for a, b in self.doors)
        object.__setattr__(self, "doors", doors)

    @classmethod
    def rectangular(cls, width, depth, door_width=1.5):
        """N x M store with one door centered on the bottom wall."""
        half = 0.5 * min(door_width, width)
        door = ((0.5 * width - half, 0.0), (0.5 * width + half, 0.0))
        return cls(width, depth, None, (door,))


@dataclass(frozen=True)
class FixturePlacement:
    id: str
    template_id: str
    center: tuple
    yaw: float
    provenance: Provenance

    def footprint(self, template):
        return Obb2(np.array(self.center), np.array(template.half_extents), self.yaw)

    def front_segment(self, template):
        hx, hy = template.half_extents
        r = rot2(self.yaw)
        c = np.array(self.center)
        return c + r @ np.array([-hx, hy]), c + r @ np.array([hx, hy])

    def front_normal(self):
        return rot2(self.yaw) @ np.array([0.0, 1.0])


@dataclass(frozen=True)
class LayoutParams:
    passage_width: float = 1.2
    skip_prob: float = 0.15
    max_attempts: int = 100
    n_seed_fixtures: int = 4
    angle_tol: float = math.radians(15.0)
    seed: int = 0
    edge_resample: float = 1.0
    decay: float = 0.4
    resolution: float = 0.25
    end_gap: float = 0.1
    pair_gap: float = 0.05
    prefer_pairs: bool = True
    check_resolution: float = 0.25
    rebuild_field_between_passes: bool = False
    floor_textures: int = 26
    wall_textures: int = 17
    ceiling_textures: int = 15

    def __post_init__(self):
        if not self.passage_width > 0:
            raise GeometryError("passage_width must be positive")
        if self.max_attempts < 1:
            raise GeometryError("max_attempts must be at least 1")
        if not 0.0 <= self.skip_prob <= 1.0:
            raise GeometryError("skip_prob must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class Layout:
    store: StoreSpec
    templates: dict
    placements: tuple
    field: object = None
    textures: dict = dataclasses.field(default_factory=dict)

    def template_of(self, placement):
        return self.templates[placement.template_id]

    def footprints(self):
        return [p.footprint(self.template_of(p)) for p in self.placements]

    def placement(self, fixture_id):
        for p in self.placements:
            if p.id == fixture_id:
                return p
        raise KeyError(fixture_id)


@dataclass
class PassReport:
    axis: str
    candidates: int = 0
    feasible: int = 0
    skipped: int = 0
    placed: int = 0


@dataclass
class Violation:
    kind: str
    ids: tuple
    message: str


@dataclass
class ValidationReport:
    ok: bool
    violations: list


# ===== PASSAGE RASTER =====

def _signed_box_distance(points, center, half, yaw):
    d = points - center
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=1)
    q = np.abs(local) - half
    return np.linalg.norm(np.maximum(q, 0.0), axis=1) + np.minimum(q.max(axis=1), 0.0)


def _segment_distance(points, a, b):
    ab = b - a
    denom = max(float(ab @ ab), 1e-300)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


class PassageGrid:
    """
    Free-space raster at check_resolution. A cell belongs to the passage graph
    when the clearance at its center reaches passage_width / 2. A fixture's
    front cells lie outward of its front face, within its width and within
    passage_width / 2 + one cell of the face. The store is navigable when one
    8-connected passage component touches the door and every fixture front.
    """

    def __init__(self, store, passage_width, resolution=0.25):
        xmin, ymin, xmax, ymax = store.walls.bounds()
        self.resolution = resolution
        self.passage_width = passage_width
        self.nx = max(1, int(math.ceil((xmax - xmin) / resolution)))
        self.ny = max(1, int(math.ceil((ymax - ymin) / resolution)))
        xs = xmin + resolution * (np.arange(self.nx) + 0.5)
        ys = ymin + resolution * (np.arange(self.ny) + 0.5)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        self.points = np.stack([gx.ravel(), gy.ravel()], axis=1)
        inside = points_in_polygon(self.points, store.walls)
        self.clearance = np.where(inside, polygon_boundary_distance(self.points, store.walls), -np.inf)
        reach = 0.5 * passage_width + resolution
        self.door_cells = np.zeros(len(self.points), dtype=bool)
        for a, b in store.doors:
            self.door_cells |= _segment_distance(self.points, np.array(a), np.array(b)) <= reach
        self.door_cells &= inside
        self.fronts = {}

    def clearance_with(self, footprints):
        clear = self.clearance
        for box in footprints:
            clear = np.minimum(clear, _signed_box_distance(self.points, box.center, box.half_extents, box.yaw))
        return clear

    def front_cells(self, footprint):
        hx, hy = footprint.half_extents
        r = rot2(footprint.yaw)
        a = footprint.center + r @ np.array([-hx, hy])
        b = footprint.center + r @ np.array([hx, hy])
        near = _segment_distance(self.points, a, b) <= 0.5 * self.passage_width + self.resolution + 1e-9
        local = footprint.to_local(self.points)
        return near & (local[:, 1] >= hy) & (np.abs(local[:, 0]) <= hx)

    def add(self, fixture_id, footprint):
        self.clearance = self.clearance_with([footprint])
        self.fronts[fixture_id] = self.front_cells(footprint)

    def unreached(self, clearance, fronts):
        """Ids whose front no door-connected component touches; '<door>' if the door is cut off."""
        passage = (clearance > 0.0) & (clearance >= 0.5 * self.passage_width - 1e-9)
        labels, _ = ndimage.label(passage.reshape(self.nx, self.ny), structure=np.ones((3, 3)))
        labels = labels.ravel()
        door_labels = set(np.unique(labels[self.door_cells & passage]).tolist()) - {0}
        if not door_labels:
            return ["<door>"]
        best_missing = None
        for lab in sorted(door_labels):
            missing = [fid for fid, cells in fronts.items() if not np.any(labels[cells] == lab)]
            if best_missing is None or len(missing) < len(best_missing):
                best_missing = missing
            if not missing:
                return []
        return best_missing

    def navigable_with(self, new):
        """new: list of (fixture_id, footprint) tentatively added."""
        clear = self.clearance_with([box for _, box in new])
        fronts = dict(self.fronts)
        for fid, box in new:
            fronts[fid] = self.front_cells(box)
        return not self.unreached(clear, fronts)


# ===== BUILDER STATE =====

class _Occupancy:
    """Placed footprints as arrays for vectorized overlap tests."""

    def __init__(self, params):
        self.params = params
        self.centers = np.zeros((0, 2))
        self.half = np.zeros((0, 2))
        self.half_inflated = np.zeros((0, 2))
        self.yaws = np.zeros(0)

    def add(self, box, shelf_like):
        pw = self.params.passage_width
        pad = (self.params.end_gap, pw) if shelf_like else (pw, pw)
        self.centers = np.vstack([self.centers, box.center])
        self.half = np.vstack([self.half, box.half_extents])
        self.half_inflated = np.vstack([self.half_inflated, box.half_extents + np.array(pad)])
        self.yaws = np.append(self.yaws, box.yaw)

    def clear_of(self, box, pad):
        """True if box padded by pad misses every placement, and box misses every padded placement."""
        if len(self.yaws) == 0:
            return True
        padded = box.inflated(*pad)
        if np.any(obb_overlap_many(padded, self.centers, self.half, self.yaws)):
            return False
        return not np.any(obb_overlap_many(box, self.centers, self.half_inflated, self.yaws))


def _next_id(placements):
    return f"fx_{len(placements):03d}"


def _state_from(layout, params):
    occ = _Occupancy(params)
    grid = PassageGrid(layout.store, params.passage_width, params.check_resolution)
    for p in layout.placements:
        tpl = layout.template_of(p)
        box = p.footprint(tpl)
        occ.add(box, tpl.kind == FixtureKind.SHELF)
        grid.add(p.id, box)
    return occ, grid


# ===== STAGE 1 =====

def seed_fixtures(store, templates, params, rng, existing=()):
    """
    Rejection-sample params.n_seed_fixtures non-shelf fixtures. Returns fewer
    only when attempts run out; raises SeedingFailedError if none fit.
    """
    n = params.n_seed_fixtures
    if n <= 0:
        return []
    pool = [t for t in templates if t.kind != FixtureKind.SHELF]
    if not pool:
        logger.warning("No non-shelf templates available, skipping fixture seeding.")
        return []
    tdict = {t.id: t for t in templates}
    base = Layout(store, tdict, tuple(existing))
    occ, grid = _state_from(base, params)
    placements = list(existing)
    xmin, ymin, xmax, ymax = store.walls.bounds()
    pw = params.passage_width

    for _ in range(n):
        placed = False
        for _attempt in range(params.max_attempts):
            tpl = pool[int(rng.integers(len(pool)))]
            if tpl.kind in (FixtureKind.FRIDGE, FixtureKind.SHOWCASE):
                yaw = (0.0, math.pi / 2)[int(rng.integers(2))]
            else:
                yaw = wrap_angle(float(rng.uniform(0.0, 2.0 * math.pi)))
            center = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
            box = Obb2(center, np.array(tpl.half_extents), yaw)
            if not obb_in_polygon(box.inflated(pw), store.walls):
                continue
            if not occ.clear_of(box, (pw, pw)):
                continue
            fid = _next_id(placements)
            if not grid.navigable_with([(fid, box)]):
                continue
            placement = FixturePlacement(fid, tpl.id, (float(center[0]), float(center[1])), yaw, Provenance.SEEDED)
            placements.append(placement)
            occ.add(box, False)
            grid.add(fid, box)
            placed = True
            break
        if not placed:
            logger.debug(f"Seed fixture {len(placements) - len(existing) + 1} not placed after {params.max_attempts} attempts")

    seeded = placements[len(existing):]
    if not seeded:
        raise SeedingFailedError(f"no seed fixture fits after {params.max_attempts * n} attempts")
    if len(seeded) < n:
        logger.warning(f"Seeding placed {len(seeded)}/{n} fixtures (attempts exhausted).")
    return seeded


# ===== STAGE 2 =====

def fixture_polygons(layout, params, provenances=(Provenance.SEEDED,)):
    """Wall polygon plus the footprints of the selected placements, resampled."""
    polys = [resample_polygon(layout.store.walls, params.edge_resample)]
    for p in layout.placements:
        if p.provenance in provenances:
            polys.append(resample_polygon(p.footprint(layout.template_of(p)).to_polygon(), params.edge_resample))
    return polys


def layout_field(layout, params, provenances=(Provenance.SEEDED,)):
    return build_field(fixture_polygons(layout, params, provenances), params.decay,
                       params.resolution, layout.store.walls.bounds())


# ===== STAGE 3 =====

def _shelf_unit(point, psi, tpl, pair, pair_gap):
    """Footprints (center, yaw) of a single shelf or a back-to-back pair plus their union box."""
    hx, hy = tpl.half_extents
    normal = np.array([-math.sin(psi), math.cos(psi)])
    if not pair:
        union = Obb2(point, np.array([hx, hy]), psi)
        return [(point, wrap_angle(psi))], union
    offset = hy + 0.5 * pair_gap
    units = [(point + offset * normal, wrap_angle(psi)),
             (point - offset * normal, wrap_angle(psi + math.pi))]
    union = Obb2(point, np.array([hx, 2.0 * hy + 0.5 * pair_gap]), psi)
    return units, union


def _scan_order(nx, ny, axis):
    if axis == PassAxis.HORIZONTAL:
        for j in range(ny):
            for i in range(nx):
                yield i, j
    else:
        for i in range(nx):
            for j in range(ny):
                yield i, j


def place_pass(layout, axis, params, rng):
    """
    One placement pass over the field lattice. Returns the extended layout
    and a PassReport; existing placements are never moved.
    """
    axis = PassAxis(axis) if not isinstance(axis, PassAxis) else axis
    report = PassReport(axis.name.lower())
    shelves = [t for t in layout.templates.values() if t.kind == FixtureKind.SHELF]
    fld = layout.field
    if fld is None or not shelves:
        return layout, report

    occ, grid = _state_from(layout, params)
    placements = list(layout.placements)
    walls = layout.store.walls
    provenance = Provenance.HORIZONTAL if axis == PassAxis.HORIZONTAL else Provenance.VERTICAL
    shelves.sort(key=lambda t: t.id)
    lattice = fld.lattice_points()
    nx, ny = fld.shape
    inside = points_in_polygon(lattice.reshape(-1, 2), walls).reshape(nx, ny)
    pw = params.passage_width

    for i, j in _scan_order(nx, ny, axis):
        if not inside[i, j]:
            continue
        point = lattice[i, j]
        if len(occ.yaws) and np.any(obb_overlap_many(Obb2(point, np.array([1e-6, 1e-6])),
                                                     occ.centers, occ.half, occ.yaws)):
            continue
        try:
            psi = major_direction(eval_field(fld, point))
        except DegenerateTensorError:
            continue
        deviation = abs(psi - axis.value)
        deviation = min(deviation, math.pi - deviation)
        if deviation > params.angle_tol:
            continue

        report.candidates += 1
        tpl = shelves[int(rng.integers(len(shelves)))]
        chosen = None
        for pair in ((True, False) if params.prefer_pairs else (False,)):
            units, union = _shelf_unit(point, psi, tpl, pair, params.pair_gap)
            if not obb_in_polygon(union.inflated(params.end_gap, pw), walls):
                continue
            if not occ.clear_of(union, (params.end_gap, pw)):
                continue
            boxes = [Obb2(c, np.array(tpl.half_extents), yaw) for c, yaw in units]
            ids = [f"fx_{len(placements) + k:03d}" for k in range(len(boxes))]
            if not grid.navigable_with(list(zip(ids, boxes))):
                continue
            chosen = (units, boxes, ids)
            break
        if chosen is None:
            continue

        report.feasible += 1
        if rng.random() < params.skip_prob:
            report.skipped += 1
            continue

        for (c, yaw), box, fid in zip(*chosen):
            placements.append(FixturePlacement(fid, tpl.id, (float(c[0]), float(c[1])), yaw, provenance))
            occ.add(box, True)
            grid.add(fid, box)
            report.placed += 1

    logger.info(f"{axis.name.capitalize()} pass: {report.placed} shelves placed "
                f"({report.feasible} feasible of {report.candidates} aligned candidates, {report.skipped} skipped)")
    return replace(layout, placements=tuple(placements)), report


# ===== PIPELINE =====

def _sample_textures(params, rng):
    return {
        "floor": f"floor_{int(rng.integers(params.floor_textures)):02d}",
        "wall": f"wall_{int(rng.integers(params.wall_textures)):02d}",
        "ceiling": f"ceiling_{int(rng.integers(params.ceiling_textures)):02d}",
    }


def generate_layout(store, templates, params, seed=None, reports=None):
    """
    seed_fixtures -> resample -> build_field -> horizontal pass -> vertical pass.
    Deterministic in (store, templates, params, seed).
    """
    if not templates:
        raise ValueError("at least one fixture template is required")
    root = params.seed if seed is None else seed
    tdict = {t.id: t for t in templates}

    seeded = seed_fixtures(store, templates, params, seeding.generator(root, "layout/seed"))
    layout = Layout(store, tdict, tuple(seeded))
    layout = replace(layout, field=layout_field(layout, params))

    layout, h_report = place_pass(layout, PassAxis.HORIZONTAL, params, seeding.generator(root, "layout/horizontal"))
    if params.rebuild_field_between_passes:
        layout = replace(layout, field=layout_field(layout, params, (Provenance.SEEDED, Provenance.HORIZONTAL)))
    layout, v_report = place_pass(layout, PassAxis.VERTICAL, params, seeding.generator(root, "layout/vertical"))
    layout = replace(layout, textures=_sample_textures(params, seeding.generator(root, "layout/textures")))
    if reports is not None:
        reports.extend([h_report, v_report])

    check = validate_layout(layout, params)
    if not check.ok:
        for v in check.violations:
            logger.error(f"Layout violation ({v.kind}): {v.message}")
    logger.info(f"Layout generated: {len(layout.placements)} fixtures "
                f"({len(seeded)} seeded) in a {store.width}x{store.depth} m store")
    return layout


def validate_layout(layout, params):
    """Pairwise overlap, containment in the walls and door-connected navigability."""
    violations = []
    footprints = layout.footprints()
    ids = [p.id for p in layout.placements]
    for a in range(len(footprints)):
        for b in range(a + 1, len(footprints)):
            if obb_overlap(footprints[a], footprints[b]):
                violations.append(Violation("overlap", (ids[a], ids[b]), f"{ids[a]} overlaps {ids[b]}"))
    for fid, box in zip(ids, footprints):
        if not obb_in_polygon(box, layout.store.walls):
            violations.append(Violation("containment", (fid,), f"{fid} leaves the store walls"))

    grid = PassageGrid(layout.store, params.passage_width, params.check_resolution)
    for fid, box in zip(ids, footprints):
        grid.add(fid, box)
    missing = grid.unreached(grid.clearance, grid.fronts)
    if missing:
        violations.append(Violation("connectivity", tuple(missing),
                                    f"not reachable from the door: {', '.join(missing)}"))
    return ValidationReport(not violations, violations)
