"""
Top-down drawings of a store: walls, doors, fixtures coloured by kind, and
optionally the tensor-field glyphs and item positions. SVG is the primary
output; the PNG preview draws the same layers with pillow, and the JSON form
lists them as plain geometry for downstream tools.
"""

import io
import logging
import math
from dataclasses import dataclass

from PIL import Image, ImageDraw

from tensor_field import field_glyphs

logger = logging.getLogger("darkstore.render")

KIND_COLORS = {
    "shelf": "#8c6d46",
    "fridge": "#4a90d9",
    "showcase": "#6fb7e0",
    "pallet": "#c9a66b",
    "box": "#b07b4f",
}
WALL_COLOR = "#333333"
DOOR_COLOR = "#2e9e44"
GLYPH_COLOR = "#9a9a9a"
ITEM_COLOR = "#d0463b"


@dataclass(frozen=True)
class RenderOptions:
    scale: float = 40.0
    margin: float = 0.5
    glyphs: bool = False
    items: bool = False
    glyph_length: float = 0.2
    item_radius: float = 0.03


def _n(v):
    s = f"{v:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _canvas(layout, opts):
    x0, y0, x1, y1 = layout.store.walls.bounds()
    w = (x1 - x0 + 2 * opts.margin) * opts.scale
    h = (y1 - y0 + 2 * opts.margin) * opts.scale
    return x0, y0, x1, y1, int(math.ceil(w)), int(math.ceil(h))


def _glyph_segments(field, opts):
    half = 0.5 * opts.glyph_length
    for x, y, psi in field_glyphs(field):
        dx, dy = half * math.cos(psi), half * math.sin(psi)
        yield x - dx, y - dy, x + dx, y + dy


def render_svg(layout, options=None, arrangement=None, field=None):
    """SVG 1.1 document (string). World y points up; the drawing flips it."""
    opts = options or RenderOptions()
    field = field if field is not None else layout.field
    if opts.glyphs and field is None:
        raise ValueError("glyph layer requested but the layout carries no tensor field")
    x0, y0, _, y1, w, h = _canvas(layout, opts)
    s = opts.scale
    tx = (opts.margin - x0) * s
    ty = (opts.margin + y1) * s

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<g transform="translate({_n(tx)} {_n(ty)}) scale({_n(s)} {_n(-s)})">',
    ]
    pts = layout.store.walls.vertices
    d = "M " + " L ".join(f"{_n(x)} {_n(y)}" for x, y in pts) + " Z"
    out.append(f'<path class="walls" d="{d}" fill="#f4f1ea" stroke="{WALL_COLOR}" stroke-width="{_n(2.0 / s)}"/>')
    for (ax, ay), (bx, by) in layout.store.doors:
        out.append(f'<line class="door" x1="{_n(ax)}" y1="{_n(ay)}" x2="{_n(bx)}" y2="{_n(by)}" '
                   f'stroke="{DOOR_COLOR}" stroke-width="{_n(4.0 / s)}"/>')

    if opts.glyphs:
        for gx0, gy0, gx1, gy1 in _glyph_segments(field, opts):
            out.append(f'<line class="glyph" x1="{_n(gx0)}" y1="{_n(gy0)}" x2="{_n(gx1)}" y2="{_n(gy1)}" '
                       f'stroke="{GLYPH_COLOR}" stroke-width="{_n(1.0 / s)}"/>')

    for p in layout.placements:
        tpl = layout.template_of(p)
        hx, hy = tpl.half_extents
        color = KIND_COLORS.get(tpl.kind.value, "#777777")
        out.append(
            f'<rect class="fixture fixture-{tpl.kind.value}" id="{p.id}" x="{_n(-hx)}" y="{_n(-hy)}" '
            f'width="{_n(2 * hx)}" height="{_n(2 * hy)}" '
            f'transform="translate({_n(p.center[0])} {_n(p.center[1])}) rotate({_n(math.degrees(p.yaw))})" '
            f'fill="{color}" stroke="{WALL_COLOR}" stroke-width="{_n(1.0 / s)}"/>')

    if opts.items and arrangement is not None:
        for it in arrangement.items:
            x, y, _ = it.pose.position
            out.append(f'<circle class="item" cx="{_n(x)}" cy="{_n(y)}" r="{_n(opts.item_radius)}" '
                       f'fill="{ITEM_COLOR}"/>')

    out.append("</g>")
    out.append("</svg>")
    logger.debug(f"Rendered SVG {w}x{h} with {len(layout.placements)} fixtures")
    return "\n".join(out) + "\n"


def render_png(layout, options=None, arrangement=None, field=None):
    """PNG bytes of the same drawing."""
    opts = options or RenderOptions()
    field = field if field is not None else layout.field
    if opts.glyphs and field is None:
        raise ValueError("glyph layer requested but the layout carries no tensor field")
    x0, _, _, y1, w, h = _canvas(layout, opts)
    s = opts.scale

    def px(x, y):
        return (x - x0 + opts.margin) * s, (y1 - y + opts.margin) * s

    img = Image.new("RGB", (max(w, 1), max(h, 1)), "white")
    draw = ImageDraw.Draw(img)
    draw.polygon([px(x, y) for x, y in layout.store.walls.vertices], fill="#f4f1ea", outline=WALL_COLOR)
    for a, b in layout.store.doors:
        draw.line([px(*a), px(*b)], fill=DOOR_COLOR, width=4)
    if opts.glyphs:
        for gx0, gy0, gx1, gy1 in _glyph_segments(field, opts):
            draw.line([px(gx0, gy0), px(gx1, gy1)], fill=GLYPH_COLOR, width=1)
    for p in layout.placements:
        tpl = layout.template_of(p)
        corners = p.footprint(tpl).corners()
        draw.polygon([px(x, y) for x, y in corners], fill=KIND_COLORS.get(tpl.kind.value, "#777777"),
                     outline=WALL_COLOR)
    if opts.items and arrangement is not None:
        r = max(opts.item_radius * s, 1.0)
        for it in arrangement.items:
            cx, cy = px(it.pose.position[0], it.pose.position[1])
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=ITEM_COLOR)

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def render_layers(layout, options=None, arrangement=None, field=None):
    """The drawn layers as plain data (world meters, radians), for the JSON render."""
    opts = options or RenderOptions()
    field = field if field is not None else layout.field
    if opts.glyphs and field is None:
        raise ValueError("glyph layer requested but the layout carries no tensor field")
    fixtures = []
    for p in layout.placements:
        tpl = layout.template_of(p)
        fixtures.append({"id": p.id, "template": tpl.id, "kind": tpl.kind.value, "center": list(p.center),
                         "yaw": p.yaw, "corners": p.footprint(tpl).corners().tolist()})
    layers = {
        "bounds": list(layout.store.walls.bounds()),
        "walls": layout.store.walls.vertices.tolist(),
        "doors": [[list(a), list(b)] for a, b in layout.store.doors],
        "fixtures": fixtures,
    }
    if opts.glyphs:
        layers["glyphs"] = [[x, y, psi] for x, y, psi in field_glyphs(field)]
    if opts.items and arrangement is not None:
        layers["items"] = [{"id": it.id, "product": it.product_id, "position": it.pose.position.tolist()}
                           for it in arrangement.items]
    return layers
