"""
Product arrangement on fixture boards.

Boards are split into product segments (a few facings each). Every segment is
a grid of lanes; a lane is a column of slots running from the board front
(+y in the fixture frame) to the back, and each slot holds a stack.
Depletion empties lanes front-first, the way a day of shopping does.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

import seeding
from geometry import GeometryError, Pose3

logger = logging.getLogger("darkstore.arrangement")


class ProductDoesNotFitError(ValueError):
    """Raised when a product cannot be placed on a surface at the requested gap."""
    pass


# ===== TYPES =====

@dataclass(frozen=True)
class ProductSpec:
    id: str
    name: str
    category: str
    dims: tuple
    stackable: bool = False
    max_stack: int = 1
    mesh: str = ""
    chilled: bool = False
    split: str = "train"

    def __post_init__(self):
        if len(self.dims) != 3 or not all(d > 0 for d in self.dims):
            raise GeometryError(f"product {self.id}: dims must be three positive lengths")
        if self.max_stack < 1:
            raise GeometryError(f"product {self.id}: max_stack must be at least 1")
        if not self.stackable and self.max_stack != 1:
            raise GeometryError(f"product {self.id}: max_stack must be 1 when not stackable")

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=d["id"], name=d.get("name", d["id"]), category=d["category"],
            dims=tuple(float(v) for v in d["dims"]), stackable=bool(d.get("stackable", False)),
            max_stack=int(d.get("max_stack", 1)), mesh=d.get("mesh", ""),
            chilled=bool(d.get("chilled", False)), split=d.get("split", "train"),
        )


@dataclass(frozen=True)
class BoardSurface:
    """Usable board area; rect is (x0, y0, x1, y1) in the fixture frame."""
    fixture_id: str
    board_index: int
    rect: tuple
    z: float
    clearance: float
    fixture_pose: tuple = (0.0, 0.0, 0.0)

    @property
    def width(self):
        return self.rect[2] - self.rect[0]

    @property
    def depth(self):
        return self.rect[3] - self.rect[1]

    def frame(self):
        x, y, yaw = self.fixture_pose
        return Pose3.from_xyz_yaw(x, y, 0.0, yaw)


@dataclass(frozen=True)
class Lane:
    id: str
    fixture_id: str
    board_index: int
    product_id: str
    x: float
    slots: tuple
    stock: tuple

    def total(self):
        return int(sum(self.stock))

    def front_suffix_ok(self):
        """Occupied slots form a contiguous run ending at the back slot."""
        seen = False
        for count in self.stock:
            if count > 0:
                seen = True
            elif seen:
                return False
        return True


@dataclass(frozen=True)
class Item:
    id: str
    product_id: str
    pose: Pose3
    lane_id: str
    slot: int
    level: int
    fixture_id: str = ""
    board_index: int = -1


@dataclass(frozen=True, eq=False)
class Arrangement:
    layout: object
    lanes: tuple
    items: tuple
    products: dict = field(default_factory=dict)

    def lane(self, lane_id):
        for lane in self.lanes:
            if lane.id == lane_id:
                return lane
        raise KeyError(lane_id)

    def item(self, item_id):
        for it in self.items:
            if it.id == item_id:
                return it
        raise KeyError(item_id)


@dataclass(frozen=True)
class ArrangeParams:
    gap: float = 0.03
    jitter_pos: float = 0.005
    jitter_yaw: float = math.radians(3.0)
    depletion_rate: float = 0.35
    margin: float = 0.01
    min_facings: int = 2
    max_facings: int = 5
    jitter_tries: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.gap < 0 or self.jitter_pos < 0 or self.jitter_yaw < 0 or self.depletion_rate < 0:
            raise GeometryError("gap, jitter sigmas and depletion rate must be non-negative")
        if not 1 <= self.min_facings <= self.max_facings:
            raise GeometryError("facings range must satisfy 1 <= min <= max")


# ===== SURFACES =====

def placement_surfaces(template, product, margin, placement=None):
    """
    One surface per board with room for the product: clearance (gap to the
    board above less margin) >= height + margin.
    A board without headroom (gap None) is never a surface.
    """
    if margin < 0:
        raise GeometryError(f"margin must be non-negative, got {margin}")
    fixture_id = placement.id if placement is not None else template.id
    pose = (placement.center[0], placement.center[1], placement.yaw) if placement is not None else (0.0, 0.0, 0.0)
    surfaces = []
    for board in template.boards:
        if board.gap is None or board.gap - margin < product.dims[2] + margin:
            continue
        x0, y0, x1, y1 = board.rect
        rect = (x0 + margin, y0 + margin, x1 - margin, y1 - margin)
        if rect[2] <= rect[0] or rect[3] <= rect[1]:
            continue
        surfaces.append(BoardSurface(fixture_id, board.index, rect, board.z,
                                     board.gap - margin, pose))
    return surfaces


# ===== SINGLE SURFACE =====

def _jittered_offset(product, params, rng, pitch_x, pitch_y):
    """Position and yaw jitter whose rotated footprint stays inside its shrunk cell."""
    hx, hy = 0.5 * product.dims[0], 0.5 * product.dims[1]
    lim_x = 0.5 * pitch_x - 0.25 * params.gap
    lim_y = 0.5 * pitch_y - 0.25 * params.gap
    if params.jitter_pos == 0 and params.jitter_yaw == 0:
        return 0.0, 0.0, 0.0
    for _ in range(params.jitter_tries):
        dx, dy = rng.normal(0.0, params.jitter_pos, 2) if params.jitter_pos > 0 else (0.0, 0.0)
        dyaw = float(rng.normal(0.0, params.jitter_yaw)) if params.jitter_yaw > 0 else 0.0
        c, s = abs(math.cos(dyaw)), abs(math.sin(dyaw))
        ex = c * hx + s * hy
        ey = s * hx + c * hy
        if abs(dx) + ex <= lim_x and abs(dy) + ey <= lim_y:
            return float(dx), float(dy), dyaw
    return 0.0, 0.0, 0.0


def arrange_surface(surface, product, params, rng, lane_prefix=None, item_start=0):
    """
    Fill a surface with a lane grid of one product. Returns (lanes, items).
    Lanes are centered across the rect; slot 0 is the front.
    """
    pitch_x = product.dims[0] + params.gap
    pitch_y = product.dims[1] + params.gap
    n_lanes = int(math.floor(surface.width / pitch_x + 1e-9))
    n_slots = int(math.floor(surface.depth / pitch_y + 1e-9))
    levels = min(product.max_stack, int(math.floor(surface.clearance / product.dims[2] + 1e-9)))
    if n_lanes < 1 or n_slots < 1 or levels < 1:
        raise ProductDoesNotFitError(
            f"{product.id} ({product.dims}) does not fit board {surface.board_index} of {surface.fixture_id}")

    x0, y0, x1, y1 = surface.rect
    off_x = 0.5 * (surface.width - n_lanes * pitch_x)
    off_y = 0.5 * (surface.depth - n_slots * pitch_y)
    frame = surface.frame()
    prefix = lane_prefix or f"{surface.fixture_id}/b{surface.board_index}"

    lanes, items = [], []
    counter = item_start
    for i in range(n_lanes):
        lx = x0 + off_x + pitch_x * (i + 0.5)
        slots = tuple(y1 - off_y - pitch_y * (k + 0.5) for k in range(n_slots))
        lane_id = f"{prefix}/l{i:02d}"
        lanes.append(Lane(lane_id, surface.fixture_id, surface.board_index, product.id,
                          lx, slots, tuple([levels] * n_slots)))
        for k, ly in enumerate(slots):
            dx, dy, dyaw = _jittered_offset(product, params, rng, pitch_x, pitch_y)
            for level in range(levels):
                z = surface.z + product.dims[2] * (level + 0.5)
                local = Pose3.from_xyz_yaw(lx + dx, ly + dy, z, dyaw)
                items.append(Item(f"it_{counter:05d}", product.id, frame.compose(local), lane_id, k, level,
                                  surface.fixture_id, surface.board_index))
                counter += 1
    return lanes, items


# ===== WHOLE STORE =====

def _sub_surface(surface, x_lo, x_hi):
    return replace(surface, rect=(x_lo, surface.rect[1], x_hi, surface.rect[3]))


def _assign_categories(placements, categories, chilled, policy, rng):
    """fixture id -> category."""
    order = list(categories)
    rng.shuffle(order)
    cold = [c for c in order if c in chilled] or order
    assigned = {}
    k_dry = k_cold = 0
    for p, kind in placements:
        pool = cold if kind in ("fridge", "showcase") else order
        if callable(policy):
            assigned[p.id] = policy(p, pool)
        elif policy == "random":
            assigned[p.id] = pool[int(rng.integers(len(pool)))]
        elif kind in ("fridge", "showcase"):
            assigned[p.id] = pool[k_cold % len(pool)]
            k_cold += 1
        else:
            assigned[p.id] = pool[k_dry % len(pool)]
            k_dry += 1
    return assigned


def _fill_board(placement, template, board, products, params, rng, counter):
    lanes, items = [], []
    fitting = [(p, placement_surfaces(template, p, params.margin, placement)) for p in products]
    fitting = [(p, next(s for s in surfs if s.board_index == board.index)) for p, surfs in fitting
               if any(s.board_index == board.index for s in surfs)]
    fitting = [(p, s) for p, s in fitting if s.depth >= p.dims[1] + params.gap]
    if not fitting:
        return lanes, items, counter
    x = fitting[0][1].rect[0]
    x_end = fitting[0][1].rect[2]
    segment = 0
    while True:
        product, surface = fitting[int(rng.integers(len(fitting)))]
        pitch = product.dims[0] + params.gap
        room = int(math.floor((x_end - x) / pitch + 1e-9))
        if room < 1:
            narrow = [(p, s) for p, s in fitting if p.dims[0] + params.gap <= x_end - x + 1e-9]
            if not narrow:
                break
            product, surface = narrow[int(rng.integers(len(narrow)))]
            pitch = product.dims[0] + params.gap
            room = int(math.floor((x_end - x) / pitch + 1e-9))
        facings = min(room, int(rng.integers(params.min_facings, params.max_facings + 1)))
        sub = _sub_surface(surface, x, x + facings * pitch)
        prefix = f"{placement.id}/b{board.index}/s{segment}"
        seg_lanes, seg_items = arrange_surface(sub, product, params, rng, prefix, counter)
        lanes.extend(seg_lanes)
        items.extend(seg_items)
        counter += len(seg_items)
        x += facings * pitch
        segment += 1
    return lanes, items, counter


def arrange_store(layout, catalog, policy="round_robin", params=None, seed=None):
    """
    Assign a category per fixture and fill every board with product segments.
    policy is "round_robin", "random" or a callable (placement, categories) -> category.
    """
    params = params or ArrangeParams()
    if not catalog:
        raise ValueError("product catalog is empty")
    root = params.seed if seed is None else seed
    by_category = {}
    for p in catalog:
        by_category.setdefault(p.category, []).append(p)
    categories = sorted(by_category)
    chilled = {c for c, ps in by_category.items() if any(p.chilled for p in ps)}

    shelved = [(p, layout.template_of(p)) for p in layout.placements if layout.template_of(p).boards]
    assigned = _assign_categories([(p, t.kind.value) for p, t in shelved], categories, chilled, policy,
                                  seeding.generator(root, "arrange/categories"))

    lanes, items = [], []
    counter = 0
    for placement, template in shelved:
        rng = seeding.generator(root, f"arrange/{placement.id}")
        products = sorted(by_category[assigned[placement.id]], key=lambda p: p.id)
        for board in template.boards:
            b_lanes, b_items, counter = _fill_board(placement, template, board, products, params, rng, counter)
            lanes.extend(b_lanes)
            items.extend(b_items)

    logger.info(f"Arranged {len(items)} items in {len(lanes)} lanes over {len(shelved)} fixtures")
    return Arrangement(layout, tuple(lanes), tuple(items), {p.id: p for p in catalog})


# ===== DEPLETION =====

def deplete(arr, days, rate, rng):
    """
    Remove k ~ Poisson(rate * days) items per lane, front slot first and top of
    stack first. Surviving items keep their poses.
    """
    if days < 0 or rate < 0:
        raise ValueError("days and rate must be non-negative")
    if days == 0 or rate == 0 or not arr.lanes:
        return arr
    draws = rng.poisson(rate * days, size=len(arr.lanes))
    removed = set()
    lanes = []
    total = 0
    for lane, k in zip(arr.lanes, draws):
        stock = list(lane.stock)
        k = min(int(k), lane.total())
        total += k
        slot = 0
        while k > 0:
            while stock[slot] == 0:
                slot += 1
            removed.add((lane.id, slot, stock[slot] - 1))
            stock[slot] -= 1
            k -= 1
        lanes.append(replace(lane, stock=tuple(stock)))
    items = tuple(it for it in arr.items if (it.lane_id, it.slot, it.level) not in removed)
    logger.debug(f"Depletion over {days} days removed {total} items from {len(lanes)} lanes")
    return replace(arr, lanes=tuple(lanes), items=items)


# ===== QUERIES =====

def item_local_pose(arr, item):
    """Item pose in its fixture frame."""
    placement = arr.layout.placement(item.fixture_id)
    frame = Pose3.from_xyz_yaw(placement.center[0], placement.center[1], 0.0, placement.yaw)
    return frame.inverse().compose(item.pose)


def item_counts(arr):
    counts = {}
    for it in arr.items:
        counts[it.product_id] = counts.get(it.product_id, 0) + 1
    return dict(sorted(counts.items()))


def items_of_product(arr, product_id, fixture_id=None):
    return [it for it in arr.items
            if it.product_id == product_id and (fixture_id is None or it.fixture_id == fixture_id)]
