"""
Loaders for the data files shipped in data/: fixture templates, the product
catalog (with the per-task train/test item split) and the default robot.
"""

import json
import logging
import os

from arrangement import ProductSpec
from kinematics import load_robot
from layout import Board, FixtureKind, FixtureTemplate

logger = logging.getLogger("darkstore.assets")

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
FIXTURES_FILE = os.path.join(DATA_DIR, "fixtures.json")
CATALOG_FILE = os.path.join(DATA_DIR, "catalog.json")
ROBOT_FILE = os.path.join(DATA_DIR, "robot_fetch_like.json")


def _read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def template_from_dict(d):
    boards = tuple(
        Board(i, float(b["z"]), tuple(float(v) for v in b["rect"]),
              None if b.get("gap") is None else float(b["gap"]), float(b.get("thickness", 0.02)))
        for i, b in enumerate(d.get("boards", []))
    )
    return FixtureTemplate(
        id=d["id"], kind=FixtureKind(d["kind"]), half_extents=tuple(float(v) for v in d["half_extents"]),
        height=float(d["height"]), boards=boards, doors=int(d.get("doors", 0)),
    )


def template_to_dict(t):
    d = {"id": t.id, "kind": t.kind.value, "half_extents": list(t.half_extents), "height": t.height,
         "boards": [{"z": b.z, "rect": list(b.rect), "gap": b.gap, "thickness": b.thickness} for b in t.boards]}
    if t.doors:
        d["doors"] = t.doors
    return d


def load_templates(path=None):
    """Fixture templates keyed by id."""
    data = _read_json(path or FIXTURES_FILE)
    templates = {}
    for entry in data["templates"]:
        t = template_from_dict(entry)
        if t.id in templates:
            raise ValueError(f"duplicate fixture template id '{t.id}'")
        templates[t.id] = t
    logger.debug(f"Loaded {len(templates)} fixture templates")
    return templates


class Catalog:
    """Products in file order plus the per-task item split."""

    def __init__(self, products, task_items=None):
        self.products = list(products)
        self.by_id = {p.id: p for p in self.products}
        if len(self.by_id) != len(self.products):
            raise ValueError("duplicate product id in catalog")
        self.task_items = dict(task_items or {})
        for task, split in self.task_items.items():
            for side in ("train", "test"):
                for pid in split.get(side, []):
                    if pid not in self.by_id:
                        raise ValueError(f"task '{task}' {side} item '{pid}' is not in the catalog")

    def __iter__(self):
        return iter(self.products)

    def __len__(self):
        return len(self.products)

    def __getitem__(self, product_id):
        return self.by_id[product_id]

    def __contains__(self, product_id):
        return product_id in self.by_id

    def split(self, task, side):
        return list(self.task_items.get(task, {}).get(side, []))


def load_catalog(path=None):
    data = _read_json(path or CATALOG_FILE)
    catalog = Catalog([ProductSpec.from_dict(d) for d in data["products"]], data.get("task_items"))
    logger.debug(f"Loaded {len(catalog)} products")
    return catalog


def default_robot(path=None):
    return load_robot(path or ROBOT_FILE)
