"""Deterministic SVG and PGM writers for attention heat-maps and trajectory overlays.

Coordinates are printed with fixed precision so identical inputs give identical bytes.
"""
from __future__ import annotations

import numpy as np

from .raster import LANE_LINE, ROAD, UNAVAILABLE
from .sim.geometry import box_corners, to_local
from .sim.world import World

_HEADER = '<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">\n'


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _grey(v: float) -> str:
    g = int(round(255 * (1.0 - min(1.0, max(0.0, v)))))
    return f"#{g:02x}{g:02x}{g:02x}"


def heatmap_svg(heat: np.ndarray, crop: np.ndarray | None = None, cell: int = 24) -> str:
    """The 6x6 accumulated-attention map, with the crop's semantic channels drawn to its right.

    Heat cells carry class "cell"; semantic pixels carry class "sem".
    """
    heat = np.asarray(heat, dtype=float)
    n_r, n_c = heat.shape
    width = n_c * cell
    height = n_r * cell
    gap = cell // 2
    if crop is not None:
        size = crop.shape[-1]
        px = height / size
        width += gap + size * px
    out = [_HEADER.format(w=_f(width), h=_f(height))]
    peak = heat.max() if heat.max() > 0 else 1.0
    # rows run along +x (ahead), drawn upward; columns along +y (left), drawn leftward
    for r in range(n_r):
        for c in range(n_c):
            x, y = (n_c - 1 - c) * cell, (n_r - 1 - r) * cell
            out.append(f'<rect class="cell" x="{x}" y="{y}" width="{cell}" height="{cell}" '
                       f'fill="{_grey(heat[r, c] / peak)}" data-weight="{heat[r, c]:.6f}"/>\n')
    if crop is not None:
        colours = {ROAD: "#c8c8c8", LANE_LINE: "#f0d020", UNAVAILABLE: "#303030"}
        x0 = n_c * cell + gap
        size = crop.shape[-1]
        for r in range(size):
            for c in range(size):
                fill = None
                for ch in (ROAD, LANE_LINE, UNAVAILABLE):  # later channels paint over earlier ones
                    if crop[ch, r, c] > 0.5:
                        fill = colours[ch]
                if fill is None:
                    continue
                out.append(f'<rect class="sem" x="{_f(x0 + (size - 1 - c) * px)}" y="{_f((size - 1 - r) * px)}" '
                           f'width="{_f(px)}" height="{_f(px)}" fill="{fill}"/>\n')
    out.append("</svg>\n")
    return "".join(out)


def heatmap_pgm(heat: np.ndarray, scale: int = 8) -> bytes:
    """Plain (P2) greyscale image of the heat-map, bright = high weight, same orientation as the SVG."""
    heat = np.asarray(heat, dtype=float)
    peak = heat.max() if heat.max() > 0 else 1.0
    img = np.round(255 * heat / peak).astype(int)[::-1, ::-1]
    img = np.kron(img, np.ones((scale, scale), dtype=int))
    rows = "\n".join(" ".join(str(v) for v in row) for row in img)
    return f"P2\n{img.shape[1]} {img.shape[0]}\n255\n{rows}\n".encode()


class _View:
    """Ego frame (x ahead, y left) to SVG pixels, ahead pointing up."""

    def __init__(self, x_range=(-16.0, 48.0), y_range=(-32.0, 32.0), scale: float = 8.0):
        self.x_range, self.y_range, self.scale = x_range, y_range, scale
        self.width = (y_range[1] - y_range[0]) * scale
        self.height = (x_range[1] - x_range[0]) * scale

    def points(self, pts) -> str:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        u = (self.y_range[1] - pts[:, 1]) * self.scale
        v = (self.x_range[1] - pts[:, 0]) * self.scale
        return " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(u, v))


def overlay_svg(world: World, ego_id: int, plan, predictions, pred_ids=()) -> str:
    """Lanes, vehicle footprints, one plan polyline and one polyline per prediction, all in the ego frame."""
    ego = world.vehicles[ego_id]
    view = _View()
    out = [_HEADER.format(w=_f(view.width), h=_f(view.height)),
           f'<rect x="0" y="0" width="{_f(view.width)}" height="{_f(view.height)}" fill="#ffffff"/>\n']
    for lane in world.scenario.lanes:
        pts = to_local(lane.centerline, ego.xy, ego.heading)
        out.append(f'<polyline class="lane" points="{view.points(pts)}" fill="none" stroke="#b0b0b0" '
                   f'stroke-width="{_f(lane.width * view.scale)}" stroke-opacity="0.5"/>\n')
    for vid in sorted(world.vehicles):
        v = world.vehicles[vid]
        corners = to_local(box_corners(v.x, v.y, v.heading, v.length, v.width), ego.xy, ego.heading)
        colour = "#1f5fbf" if vid == ego_id else "#707070"
        out.append(f'<polygon class="vehicle" data-id="{vid}" points="{view.points(corners)}" fill="{colour}"/>\n')
    for k, pred in enumerate(predictions):
        vid = pred_ids[k] if k < len(pred_ids) else k
        out.append(f'<polyline class="prediction" data-id="{vid}" points="{view.points(pred)}" fill="none" '
                   f'stroke="#e07000" stroke-width="2"/>\n')
    plan = np.vstack([[0.0, 0.0], np.asarray(plan, dtype=float).reshape(-1, 2)])
    out.append(f'<polyline class="plan" points="{view.points(plan)}" fill="none" stroke="#10a040" '
               f'stroke-width="3"/>\n')
    out.append("</svg>\n")
    return "".join(out)
