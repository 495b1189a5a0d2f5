"""Closed-loop ego drivers: a route-following planner and the learned network, both behind the controller."""
from __future__ import annotations

import math

import numpy as np

from ..model.interaction import InteractionNet
from ..numerics.tensor import no_grad
from ..raster import GridSpec
from ..sim.expert import behavior_label, curve_speed, stop_gap
from ..sim.geometry import to_local
from ..sim.world import BRAKE_DECEL, Controls, World
from ..training.data import batch_from_world, detected_others, next_target
from .controller import ControlCommand, Controller, ControllerConfig

STOP_MARGIN = 1.0


def stop_flag(world: World, vid: int) -> bool:
    """Ground-truth signal input: an active stop zone lies within braking reach ahead."""
    gap = stop_gap(world, vid)
    if not math.isfinite(gap):
        return False
    if not world.active_zones():
        return False
    v = world.vehicles[vid].speed
    return gap <= v * v / (2.0 * 0.5 * BRAKE_DECEL) + STOP_MARGIN


def to_ego_frame(traj: np.ndarray, pose) -> np.ndarray:
    """Map a [T, 2] trajectory from a vehicle frame at ego-frame ``pose`` (x, y, heading) into the ego frame."""
    x, y, h = pose
    c, s = math.cos(h), math.sin(h)
    return np.column_stack([x + c * traj[:, 0] - s * traj[:, 1], y + s * traj[:, 0] + c * traj[:, 1]])


def constant_velocity(world: World, ego_id: int, vid: int, steps: int, dt_wp: float) -> np.ndarray:
    ego, v = world.vehicles[ego_id], world.vehicles[vid]
    t = dt_wp * np.arange(1, steps + 1)
    pts = np.column_stack([v.x + v.speed * math.cos(v.heading) * t, v.y + v.speed * math.sin(v.heading) * t])
    return to_local(pts, ego.xy, ego.heading)


def route_plan(world: World, vid: int, steps: int, dt_wp: float, speed: float | None = None) -> np.ndarray:
    """Waypoints along the route at the cruise speed, in the vehicle frame; extends straight past the end."""
    pl = world.route(vid).polyline
    me = world.vehicles[vid]
    v = curve_speed(world, vid) if speed is None else speed
    s = world.progress[vid] + v * dt_wp * np.arange(1, steps + 1)
    pts = pl.points_at(np.minimum(s, pl.length)).reshape(-1, 2)
    over = np.maximum(s - pl.length, 0.0)
    h = pl.heading_at(pl.length - 1e-6)
    pts = pts + over[:, None] * np.array([math.cos(h), math.sin(h)])
    return to_local(pts, me.xy, me.heading)


class RouteAgent:
    """Route-following plan plus constant-velocity predictions of every detected vehicle."""

    def __init__(self, config: ControllerConfig = ControllerConfig(), steps: int = 10):
        self.controller = Controller(config)
        self.steps = steps
        self.trace: list[dict] = []

    def __call__(self, world: World) -> Controls:
        ego_id = world.scenario.ego_id
        cfg = self.controller.config
        plan = route_plan(world, ego_id, self.steps, cfg.dt_wp)
        ids = detected_others(world, ego_id)
        preds = [constant_velocity(world, ego_id, vid, self.steps, cfg.dt_wp) for vid in ids]
        radii = [world.vehicles[vid].radius for vid in ids]
        ego = world.vehicles[ego_id]
        cmd = self.controller.step(plan, preds, radii, ego.radius, ego.speed, stop_flag(world, ego_id))
        self.trace.append({"t": world.time, "plan": plan, "preds": preds, "ids": ids,
                           "risk": self.controller.last_report.risk})
        return cmd.to_controls()


class ModelAgent:
    """Learned plan and predictions from the network, tracked by the controller."""

    def __init__(self, model: InteractionNet, config: ControllerConfig = ControllerConfig(),
                 grid: GridSpec | None = None, keep_trace: bool = False):
        self.model = model
        self.controller = Controller(config)
        self.grid = grid or model.grid
        self.keep_trace = keep_trace
        self.trace: list[dict] = []

    def infer(self, world: World) -> tuple[np.ndarray, list[np.ndarray], list[int]]:
        ego_id = world.scenario.ego_id
        behavior = int(behavior_label(world, ego_id))
        batch = batch_from_world(world, ego_id, behavior, next_target(world, ego_id), self.grid,
                                 self.model.config.max_seq)
        with no_grad():
            out = self.model(batch)
        plan = out.plan.data[0]
        ids = batch.ids[0][1:]
        preds = [] if out.preds is None else [to_ego_frame(out.preds.data[k], batch.poses[k + 1])
                                             for k in range(len(ids))]
        return plan, preds, ids

    def __call__(self, world: World) -> Controls:
        ego_id = world.scenario.ego_id
        plan, preds, ids = self.infer(world)
        ego = world.vehicles[ego_id]
        radii = [world.vehicles[vid].radius for vid in ids]
        cmd: ControlCommand = self.controller.step(plan, preds, radii, ego.radius, ego.speed,
                                                   stop_flag(world, ego_id))
        if self.keep_trace:
            self.trace.append({"t": world.time, "plan": plan, "preds": preds, "ids": ids,
                               "risk": self.controller.last_report.risk})
        return cmd.to_controls()
