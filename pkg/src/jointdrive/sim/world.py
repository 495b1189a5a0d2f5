"""World state and the kinematic bicycle step."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import Polyline, wrap_angle

WHEELBASE = 2.7
MAX_WHEEL_ANGLE = math.radians(35.0)
MAX_SPEED = 15.0
THROTTLE_ACCEL = 3.0
BRAKE_DECEL = 8.0
DT = 0.1


@dataclass
class VehicleState:
    id: int
    x: float
    y: float
    heading: float
    speed: float = 0.0
    length: float = 4.5
    width: float = 2.0

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"vehicle {self.id}: dimensions must be positive")
        if self.speed < 0:
            raise ValueError(f"vehicle {self.id}: negative speed")
        self.heading = wrap_angle(self.heading)

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def radius(self) -> float:
        """Half-diagonal of the footprint."""
        return 0.5 * math.hypot(self.length, self.width)


@dataclass
class Controls:
    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0

    def validate(self) -> "Controls":
        vals = (self.steer, self.throttle, self.brake)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite control {vals}")
        return Controls(min(1.0, max(-1.0, self.steer)), min(1.0, max(0.0, self.throttle)),
                        min(1.0, max(0.0, self.brake)))


@dataclass
class Lane:
    id: str
    centerline: np.ndarray
    width: float = 3.5
    successors: list[str] = field(default_factory=list)
    left: str | None = None
    right: str | None = None
    connector: bool = False

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float)

    @cached_property
    def polyline(self) -> Polyline:
        return Polyline(self.centerline)


@dataclass
class Route:
    """Dense centerline path with the lane id of each point."""

    points: np.ndarray
    lanes: list[str]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if len(self.lanes) != len(self.points):
            raise ValueError("route needs one lane tag per point")

    @cached_property
    def polyline(self) -> Polyline:
        return Polyline(self.points)

    @cached_property
    def _point_s(self) -> np.ndarray:
        d = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(d)])

    def lane_at(self, s: float) -> str:
        return self.lanes_at([s])[0]

    def lanes_at(self, s) -> list[str]:
        idx = np.clip(np.searchsorted(self._point_s, s, side="right") - 1, 0, len(self.lanes) - 1)
        return [self.lanes[i] for i in idx]

    @cached_property
    def curvature(self) -> np.ndarray:
        """Unsigned heading change per metre, one value per segment."""
        h = self.polyline.seg_heading
        dh = np.abs(np.array([wrap_angle(b - a) for a, b in zip(h[:-1], h[1:])] + [0.0]))
        return dh / np.maximum(self.polyline.seg_len, 1e-6)

    @property
    def length(self) -> float:
        return self.polyline.length


@dataclass
class StopZone:
    """Scheduled no-go polygon standing in for a traffic signal.

    Active (red) when ``(t + offset) mod period`` falls in any [start, end) interval.
    """

    id: str
    polygon: np.ndarray
    period: float
    active_intervals: list[tuple[float, float]]
    offset: float = 0.0

    def __post_init__(self):
        self.polygon = np.asarray(self.polygon, dtype=float)
        self.active_intervals = [tuple(map(float, iv)) for iv in self.active_intervals]

    def active(self, t: float) -> bool:
        phase = (t + self.offset) % self.period
        return any(a <= phase < b for a, b in self.active_intervals)


@dataclass
class Scenario:
    seed: int
    kind: str
    lanes: list[Lane]
    vehicles: list[VehicleState]
    routes: dict[int, Route]
    stop_zones: list[StopZone] = field(default_factory=list)
    ego_id: int = 0
    ego_targets: np.ndarray | None = None
    hard_brake: dict[int, float] = field(default_factory=dict)
    max_time: float = 60.0
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.ego_targets is None and self.ego_id in self.routes:
            route = self.routes[self.ego_id]
            s = np.arange(20.0, route.length, 20.0)
            self.ego_targets = np.vstack([route.polyline.points_at(s).reshape(-1, 2),
                                          route.points[-1:]])
        self.ego_targets = np.asarray(self.ego_targets, dtype=float)

    @cached_property
    def lane_by_id(self) -> dict[str, Lane]:
        return {lane.id: lane for lane in self.lanes}


class World:
    """Mutable simulation state over a fixed Scenario."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.time = 0.0
        self.tick = 0
        self.vehicles: dict[int, VehicleState] = {v.id: copy.copy(v) for v in scenario.vehicles}
        self.progress: dict[int, float] = {}
        for vid, v in self.vehicles.items():
            if vid in scenario.routes:
                self.progress[vid] = scenario.routes[vid].polyline.project(v.xy)[0]

    @property
    def ego(self) -> VehicleState:
        return self.vehicles[self.scenario.ego_id]

    def clone(self) -> "World":
        other = World.__new__(World)
        other.scenario = self.scenario
        other.time, other.tick = self.time, self.tick
        other.vehicles = {k: copy.copy(v) for k, v in self.vehicles.items()}
        other.progress = dict(self.progress)
        return other

    def route(self, vid: int) -> Route:
        try:
            return self.scenario.routes[vid]
        except KeyError:
            raise KeyError(f"vehicle {vid} has no route") from None

    def others(self, vid: int) -> list[VehicleState]:
        return [v for k, v in self.vehicles.items() if k != vid]

    def active_zones(self, t: float | None = None) -> list[StopZone]:
        t = self.time if t is None else t
        return [z for z in self.scenario.stop_zones if z.active(t)]

    def step(self, controls: dict[int, Controls], dt: float = DT) -> "World":
        """Return the world advanced one tick; vehicles without controls coast."""
        nxt = self.clone()
        for vid, v in nxt.vehicles.items():
            c = controls.get(vid, Controls()).validate()
            nxt.vehicles[vid] = advance(v, c, dt)
            if vid in nxt.progress:
                route = self.scenario.routes[vid].polyline
                s_old = nxt.progress[vid]
                s_new, _ = route.project(nxt.vehicles[vid].xy, s_old - 2.0, s_old + MAX_SPEED * dt + 5.0)
                nxt.progress[vid] = max(s_old, s_new)
        nxt.time = round(self.time + dt, 9)
        nxt.tick = self.tick + 1
        return nxt


def advance(v: VehicleState, c: Controls, dt: float = DT) -> VehicleState:
    """Kinematic bicycle about the reference point, exact arc integration per tick."""
    accel = THROTTLE_ACCEL * c.throttle - BRAKE_DECEL * c.brake
    v1 = min(MAX_SPEED, max(0.0, v.speed + accel * dt))
    v_avg = 0.5 * (v.speed + v1)
    delta = c.steer * MAX_WHEEL_ANGLE
    omega = v_avg * math.tan(delta) / WHEELBASE
    th = v.heading
    if abs(omega * dt) < 1e-12:
        x = v.x + v_avg * dt * math.cos(th)
        y = v.y + v_avg * dt * math.sin(th)
    else:
        r = v_avg / omega
        x = v.x + r * (math.sin(th + omega * dt) - math.sin(th))
        y = v.y + r * (math.cos(th) - math.cos(th + omega * dt))
    return VehicleState(v.id, x, y, wrap_angle(th + omega * dt), v1, v.length, v.width)
