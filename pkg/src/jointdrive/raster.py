"""Ground-truth map-view rasterizer, segmentation head, and rotated RoI crops.

Stands in for a learned perception backbone: the map-view feature F is drawn
directly from simulator state in the ego frame (x forward, y left).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .numerics import tensor as T
from .numerics.nn import Conv2d, Module
from .numerics.tensor import Tensor
from .sim.geometry import box_corners, points_in_polygon, to_local, to_world
from .sim.world import MAX_SPEED, World

ROAD, LANE_LINE, UNAVAILABLE, OCCUPANCY, VEL_X, VEL_Y, SIN_H, COS_H, EGO, ROUTE, STOP = range(11)
N_CHANNELS = 16
SEG_CHANNELS = (ROAD, LANE_LINE, UNAVAILABLE)
ROUTE_RADIUS = 2.0
SAMPLE_STEP = 0.1


@dataclass(frozen=True)
class GridSpec:
    """Cell (r, c) covers x in [x_min + r*res, ...), y in [y_min + c*res, ...)."""

    x_min: float = -16.0
    y_min: float = -32.0
    size: int = 64
    res: float = 1.0
    channels: int = N_CHANNELS

    def cell_centers(self) -> np.ndarray:
        """[size, size, 2] ego-frame centers, rows along +x and columns along +y."""
        ax = self.x_min + (np.arange(self.size) + 0.5) * self.res
        ay = self.y_min + (np.arange(self.size) + 0.5) * self.res
        xx, yy = np.meshgrid(ax, ay, indexing="ij")
        return np.stack([xx, yy], axis=-1)

    def to_index(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Ego-frame metres to fractional (row, col) with cell centers at integers."""
        return (np.asarray(x) - self.x_min) / self.res - 0.5, (np.asarray(y) - self.y_min) / self.res - 0.5


@dataclass(frozen=True)
class CropSpec:
    x_min: float = -6.0
    y_min: float = -12.0
    size: int = 24
    res: float = 1.0

    def local_points(self) -> np.ndarray:
        ax = self.x_min + (np.arange(self.size) + 0.5) * self.res
        ay = self.y_min + (np.arange(self.size) + 0.5) * self.res
        xx, yy = np.meshgrid(ax, ay, indexing="ij")
        return np.stack([xx, yy], axis=-1)


def _polyline_distance(cells: np.ndarray, polyline: np.ndarray, center, radius: float, cap: float) -> np.ndarray:
    """Distance from each cell center to a polyline, saturated at ``cap``.

    The polyline is resampled every SAMPLE_STEP metres near ``center`` and
    queried with a k-d tree; the error against the exact segment distance is
    below SAMPLE_STEP**2 / (8 d).
    """
    near = np.linalg.norm(polyline - center, axis=1) < radius
    keep = near[:-1] | near[1:]
    a, b = polyline[:-1][keep], polyline[1:][keep]
    if len(a) == 0:
        return np.full(len(cells), cap)
    seg = np.linalg.norm(b - a, axis=1)
    n = np.maximum(1, np.ceil(seg / SAMPLE_STEP).astype(int))
    u = np.concatenate([np.arange(k) / k for k in n] + [[1.0]])
    i = np.concatenate([np.full(k, j) for j, k in enumerate(n)] + [[len(a) - 1]])
    samples = a[i] + u[:, None] * (b[i] - a[i])
    d, _ = cKDTree(samples).query(cells, distance_upper_bound=cap)
    return np.minimum(d, cap)


def rasterize(world: World, ego_id: int | None = None, grid: GridSpec = GridSpec()) -> np.ndarray:
    """Map-view feature [C, H, W] in ``ego_id``'s frame; every channel lies in [-1, 1]."""
    sc = world.scenario
    ego_id = sc.ego_id if ego_id is None else ego_id
    if ego_id not in world.vehicles:
        raise KeyError(f"vehicle {ego_id} not in world")
    ego = world.vehicles[ego_id]
    F = np.zeros((grid.channels, grid.size, grid.size))
    local = grid.cell_centers()
    pts = to_world(local, ego.xy, ego.heading).reshape(-1, 2)
    reach = math.hypot(max(abs(grid.x_min), abs(grid.x_min + grid.size * grid.res)),
                       max(abs(grid.y_min), abs(grid.y_min + grid.size * grid.res))) + 5.0

    road = np.zeros(len(pts), dtype=bool)
    line = np.zeros(len(pts), dtype=bool)
    for lane in sc.lanes:
        d = _polyline_distance(pts, lane.centerline, ego.xy, reach, lane.width)
        road |= d <= lane.width / 2.0
        if not lane.connector:
            line |= np.abs(d - lane.width / 2.0) < 0.5 * grid.res
    F[ROAD] = road.reshape(grid.size, grid.size)
    F[LANE_LINE] = line.reshape(grid.size, grid.size)
    F[UNAVAILABLE] = 1.0 - F[ROAD]

    for v in world.vehicles.values():
        if math.hypot(v.x - ego.x, v.y - ego.y) > reach + v.radius:
            continue
        inside = points_in_polygon(pts, box_corners(v.x, v.y, v.heading, v.length, v.width))
        if not inside.any():
            continue
        mask = inside.reshape(grid.size, grid.size)
        rel = v.heading - ego.heading
        F[EGO if v.id == ego_id else OCCUPANCY][mask] = 1.0
        F[VEL_X][mask] = v.speed * math.cos(rel) / MAX_SPEED
        F[VEL_Y][mask] = v.speed * math.sin(rel) / MAX_SPEED
        F[SIN_H][mask] = math.sin(rel)
        F[COS_H][mask] = math.cos(rel)

    if ego_id in sc.routes:
        d = _polyline_distance(pts, sc.routes[ego_id].points, ego.xy, reach, 2.0 * ROUTE_RADIUS)
        F[ROUTE] = (d <= ROUTE_RADIUS).reshape(grid.size, grid.size)
    for z in world.active_zones():
        F[STOP][points_in_polygon(pts, z.polygon).reshape(grid.size, grid.size)] = 1.0
    return F


def seg_targets(F: np.ndarray) -> np.ndarray:
    """Ground-truth semantic masks (road, lane line, unavailable) carried by F itself."""
    return F[..., list(SEG_CHANNELS), :, :]


class SegHead(Module):
    """Two 3x3 convolutions C -> 32 -> 3 with a ReLU between, same resolution."""

    def __init__(self, channels: int = N_CHANNELS, hidden: int = 32, seed: int = 0, prefix: str = "seg_head",
                 zero_init: bool = False):
        super().__init__(seed, prefix)
        self.conv1 = Conv2d(channels, hidden, 3, padding=1, seed=seed, prefix=self.child("conv1"))
        self.conv2 = Conv2d(hidden, 3, 3, padding=1, seed=seed, prefix=self.child("conv2"), zero_init=zero_init)

    def __call__(self, F: Tensor) -> Tensor:
        return self.conv2(T.relu(self.conv1(F)))


class Perception(Module):
    """Trainable surrogate for the perception stage.

    ``adapt`` is a zero-initialised 1x1 residual on F, so the planner sees the
    same features the segmentation head is trained on; the head reads the
    adapted map. Both belong to the perception parameter group.
    """

    def __init__(self, channels: int = N_CHANNELS, seed: int = 0, prefix: str = "perception"):
        super().__init__(seed, prefix)
        self.adapt = Conv2d(channels, channels, 1, seed=seed, prefix=self.child("adapt"), zero_init=True)
        self.seg_head = SegHead(channels, seed=seed, prefix=self.child("seg_head"))

    def features(self, F: Tensor) -> Tensor:
        return F + self.adapt(F)

    def __call__(self, F: Tensor) -> tuple[Tensor, Tensor]:
        Fp = self.features(F)
        return Fp, self.seg_head(Fp)


def relative_poses(world: World, ego_id: int, vehicle_ids) -> np.ndarray:
    """[M, 3] (x, y, heading) of each vehicle in the ego frame."""
    ego = world.vehicles[ego_id]
    out = []
    for vid in vehicle_ids:
        v = world.vehicles[vid]
        x, y = to_local(v.xy, ego.xy, ego.heading)
        out.append((x, y, math.remainder(v.heading - ego.heading, 2.0 * math.pi)))
    return np.array(out, dtype=float).reshape(-1, 3)


def crop_coords(poses, grid: GridSpec = GridSpec(), crop: CropSpec = CropSpec()) -> tuple[np.ndarray, np.ndarray]:
    """Fractional (rows, cols) of F sampled for each pose; both [M, h, w]."""
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(poses)):
        raise ValueError("crop pose must be finite")
    pts = crop.local_points()
    c, s = np.cos(poses[:, 2])[:, None, None], np.sin(poses[:, 2])[:, None, None]
    x = poses[:, 0, None, None] + c * pts[..., 0] - s * pts[..., 1]
    y = poses[:, 1, None, None] + s * pts[..., 0] + c * pts[..., 1]
    return grid.to_index(x, y)


def crop_rotated_roi(F: Tensor, poses, index=None, grid: GridSpec = GridSpec(),
                     crop: CropSpec = CropSpec()) -> Tensor:
    """Heading-aligned crops [M, C, h, w] of F [N, C, H, W] (or [C, H, W]) at ego-frame poses.

    ``index`` [M] selects which map in the batch each pose reads from.
    """
    if F.ndim == 3:
        F = F.reshape(1, *F.shape)
    rows, cols = crop_coords(poses, grid, crop)
    if index is None:
        index = np.zeros(len(rows), dtype=np.int64)
    return T.grid_sample(F, rows, cols, index)
