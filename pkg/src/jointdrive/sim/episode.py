"""Episode rollouts, label generation and driving metrics."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .expert import expert_controls
from .geometry import box_corners, boxes_overlap, points_in_polygon, to_local
from .scenarios import vehicle_to_dict
from .world import DT, Controls, Scenario, VehicleState, World

COLLISION_PENALTY = 0.60
STOP_VIOLATION_PENALTY = 0.80
OFF_ROUTE_DISTANCE = 4.0
GOAL_TOLERANCE = 3.0

Driver = Callable[[World], Controls]


class EmptyLogError(ValueError):
    pass


def background_controls(world: World, vid: int) -> Controls:
    """Expert controls, overridden by a scripted full brake once its time has come."""
    t_brake = world.scenario.hard_brake.get(vid)
    if t_brake is not None and world.time >= t_brake - 1e-9:
        return Controls(0.0, 0.0, 1.0)
    return expert_controls(world, vid)


def all_controls(world: World, ego_driver: Driver | None = None) -> dict[int, Controls]:
    ego = world.scenario.ego_id
    out = {}
    for vid in world.vehicles:
        if vid == ego and ego_driver is not None:
            out[vid] = ego_driver(world)
        else:
            out[vid] = background_controls(world, vid)
    return out


def rollout_states(world: World, ticks: int) -> list[World]:
    """Advance a clone of ``world`` under expert control; returns the ``ticks`` later worlds."""
    w = world.clone()
    out = []
    for _ in range(ticks):
        w = w.step(all_controls(w))
        out.append(w)
    return out


def trajectory_in_frame(vehicle: VehicleState, future: list[VehicleState]) -> np.ndarray:
    pts = np.array([[v.x, v.y] for v in future])
    return to_local(pts, vehicle.xy, vehicle.heading)


def rollout_labels(world: World, vehicle_id: int, T: int = 10, dt_wp: float = 0.5) -> np.ndarray:
    """Future positions of ``vehicle_id`` at dt_wp, 2*dt_wp, ... in its current ego frame, [T, 2]."""
    stride = int(round(dt_wp / DT))
    future = rollout_states(world, T * stride)
    me = world.vehicles[vehicle_id]
    return trajectory_in_frame(me, [future[(k + 1) * stride - 1].vehicles[vehicle_id] for k in range(T)])


def collisions(world: World) -> set[tuple[int, int]]:
    vs = list(world.vehicles.values())
    hits = set()
    for i in range(len(vs)):
        for j in range(i + 1, len(vs)):
            a, b = vs[i], vs[j]
            if math.hypot(a.x - b.x, a.y - b.y) > a.radius + b.radius:
                continue
            if boxes_overlap(box_corners(a.x, a.y, a.heading, a.length, a.width),
                             box_corners(b.x, b.y, b.heading, b.length, b.width)):
                hits.add((min(a.id, b.id), max(a.id, b.id)))
    return hits


def front_point(v: VehicleState) -> np.ndarray:
    return np.array([v.x + 0.5 * v.length * math.cos(v.heading), v.y + 0.5 * v.length * math.sin(v.heading)])


@dataclass
class TickRecord:
    t: float
    states: list[dict]
    control: dict
    events: list[str]
    progress: float


@dataclass
class EpisodeLog:
    seed: int
    kind: str
    route_length: float
    records: list[TickRecord] = field(default_factory=list)
    outcome: str = "timeout"

    def events(self) -> list[str]:
        return [e for r in self.records for e in r.events]

    @property
    def progress(self) -> float:
        return self.records[-1].progress if self.records else 0.0

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            header = {"seed": self.seed, "kind": self.kind, "route_length": self.route_length,
                      "outcome": self.outcome}
            fh.write(json.dumps({"header": header}) + "\n")
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "EpisodeLog":
        lines = Path(path).read_text().splitlines()
        header = json.loads(lines[0])["header"]
        log = cls(header["seed"], header["kind"], header["route_length"], outcome=header["outcome"])
        log.records = [TickRecord(**json.loads(line)) for line in lines[1:]]
        return log


def run_episode(scenario: Scenario, ego_driver: Driver | None = None, max_time: float | None = None,
                on_tick: Callable[[World], None] | None = None) -> EpisodeLog:
    """Closed-loop rollout; the ego uses ``ego_driver`` (expert when None)."""
    world = World(scenario)
    ego = scenario.ego_id
    route = scenario.routes[ego].polyline
    goal = max(route.length - GOAL_TOLERANCE, 1e-6)
    log = EpisodeLog(scenario.seed, scenario.kind, route.length)
    max_time = scenario.max_time if max_time is None else max_time
    touching: set[tuple[int, int]] = set()
    zone_inside = {z.id: bool(points_in_polygon(front_point(world.ego)[None], z.polygon)[0])
                   for z in scenario.stop_zones}
    while world.time < max_time - 1e-9:
        if on_tick is not None:
            on_tick(world)
        controls = all_controls(world, ego_driver)
        world = world.step(controls)
        events = []
        now = collisions(world)
        for pair in sorted(now - touching):
            events.append(f"collision:{pair[0]}-{pair[1]}")
        touching = now
        fp = front_point(world.ego)[None]
        for z in scenario.stop_zones:
            inside = bool(points_in_polygon(fp, z.polygon)[0])
            if inside and not zone_inside[z.id] and z.active(world.time):
                events.append(f"stop_violation:{z.id}")
            zone_inside[z.id] = inside
        progress = min(1.0, world.progress[ego] / goal)
        off_route = route.distance(world.ego.xy[None])[0] > OFF_ROUTE_DISTANCE
        if off_route:
            events.append("off_route")
        c = controls[ego]
        log.records.append(TickRecord(world.time, [vehicle_to_dict(v) for v in world.vehicles.values()],
                                      {"steer": c.steer, "throttle": c.throttle, "brake": c.brake},
                                      events, progress))
        if off_route:
            log.outcome = "off_route"
            break
        if progress >= 1.0:
            log.outcome = "completed"
            break
    return log


def ego_collision_count(log: EpisodeLog, ego_id: int = 0) -> int:
    n = 0
    for e in log.events():
        if e.startswith("collision:") and str(ego_id) in e.split(":")[1].split("-"):
            n += 1
    return n


def compute_metrics(log: EpisodeLog, ego_id: int = 0) -> tuple[float, float, float]:
    """(route completion %, infraction score, driving score) for one episode."""
    if not log.records:
        raise EmptyLogError("cannot score an empty episode log")
    rc = 100.0 * min(1.0, max(0.0, log.progress))
    violations = sum(1 for e in log.events() if e.startswith("stop_violation:"))
    score = COLLISION_PENALTY ** ego_collision_count(log, ego_id) * STOP_VIOLATION_PENALTY ** violations
    return rc, score, rc * score
