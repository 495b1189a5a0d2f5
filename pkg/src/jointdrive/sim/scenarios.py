"""Seeded scenario generation and JSON scenario files."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .geometry import rot, wrap_angle
from .world import Lane, Route, Scenario, StopZone, VehicleState

SCHEMA_VERSION = 1
LANE_WIDTH = 3.5
KINDS = ("straight", "two_lane", "intersection")
MAX_OTHERS = 9


class ScenarioFormatError(ValueError):
    pass


def scenario_rng(seed: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def line(p0, p1, step: float = 1.0) -> np.ndarray:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(2, int(math.ceil(np.linalg.norm(p1 - p0) / step)) + 1)
    return p0 + np.linspace(0.0, 1.0, n)[:, None] * (p1 - p0)


def bezier(p0, c, p1, step: float = 0.5) -> np.ndarray:
    p0, c, p1 = (np.asarray(v, float) for v in (p0, c, p1))
    approx = np.linalg.norm(c - p0) + np.linalg.norm(p1 - c)
    u = np.linspace(0.0, 1.0, max(3, int(math.ceil(approx / step)) + 1))[:, None]
    return (1 - u) ** 2 * p0 + 2 * (1 - u) * u * c + u ** 2 * p1


def _join(*pieces: tuple[np.ndarray, str]) -> Route:
    pts, tags = [], []
    for arr, tag in pieces:
        if pts and np.linalg.norm(arr[0] - pts[-1]) < 1e-6:
            arr = arr[1:]
        pts.extend(arr)
        tags.extend([tag] * len(arr))
    return Route(np.array(pts), tags)


def _non_overlapping(vehicles: list[VehicleState], cand: VehicleState) -> bool:
    return all(math.hypot(v.x - cand.x, v.y - cand.y) > v.radius + cand.radius + 0.5 for v in vehicles)


def _safe_speed(gap: float, rng) -> float:
    """Initial speed that can stop inside ``gap`` with comfortable braking."""
    vmax = math.sqrt(max(0.0, 2.0 * 3.0 * max(gap - 4.0, 0.0)))
    return float(min(8.0, vmax) * rng.uniform(0.5, 1.0))


# ------------------------------------------------------------ straight road
def _straight_map(length: float = 300.0, two_lane: bool = False) -> list[Lane]:
    lanes = [Lane("E0", line((-50.0, -LANE_WIDTH / 2), (length - 50.0, -LANE_WIDTH / 2))),
             Lane("W0", line((length - 50.0, LANE_WIDTH / 2), (-50.0, LANE_WIDTH / 2)))]
    if two_lane:
        lanes[0].right = "E1"
        lanes.append(Lane("E1", line((-50.0, -1.5 * LANE_WIDTH), (length - 50.0, -1.5 * LANE_WIDTH)),
                          left="E0"))
    return lanes


def _lane_route(lane: Lane, x_from: float, x_to: float) -> Route:
    pts = lane.centerline
    direction = np.sign(pts[-1, 0] - pts[0, 0])
    keep = (direction * pts[:, 0] >= direction * x_from) & (direction * pts[:, 0] <= direction * x_to)
    return Route(pts[keep], [lane.id] * int(keep.sum()))


def straight(seed: int, index: int = 0, n_max: int = MAX_OTHERS) -> Scenario:
    rng = scenario_rng(seed, index)
    lanes = _straight_map()
    e0, w0 = lanes
    route_len = float(rng.uniform(90.0, 130.0))
    vehicles = [VehicleState(0, 0.0, -LANE_WIDTH / 2, 0.0, float(rng.uniform(0.0, 8.0)))]
    routes = {0: _lane_route(e0, -20.0, route_len)}
    vid = 1
    x = 0.0
    for _ in range(int(rng.integers(0, 4))):
        x += float(rng.uniform(14.0, 40.0))
        v = VehicleState(vid, x, -LANE_WIDTH / 2, 0.0, float(rng.uniform(2.0, 7.0)))
        vehicles.append(v)
        routes[vid] = _lane_route(e0, -60.0, 250.0)
        vid += 1
    lead_gap = min((v.x for v in vehicles[1:]), default=100.0) - 4.5
    vehicles[0].speed = min(vehicles[0].speed, 2.0 + _safe_speed(lead_gap, rng))
    for _ in range(int(rng.integers(0, 5))):
        cand = VehicleState(vid, float(rng.uniform(-30.0, 150.0)), LANE_WIDTH / 2, math.pi,
                            float(rng.uniform(3.0, 8.0)))
        if _non_overlapping(vehicles, cand) and len(vehicles) <= n_max:
            vehicles.append(cand)
            routes[vid] = _lane_route(w0, 260.0, -50.0)
            vid += 1
    for _ in range(int(rng.integers(0, 3))):
        cand = VehicleState(vid, float(rng.uniform(-45.0, -14.0)), -LANE_WIDTH / 2, 0.0,
                            float(rng.uniform(0.0, 3.0)))
        if _non_overlapping(vehicles, cand) and all(abs(cand.x - v.x) > 12.0 for v in vehicles
                                                    if abs(v.y - cand.y) < 1.0) and len(vehicles) <= n_max:
            vehicles.append(cand)
            routes[vid] = _lane_route(e0, -60.0, 250.0)
            vid += 1
    return Scenario(seed=seed, kind="straight", lanes=lanes, vehicles=vehicles, routes=routes,
                    max_time=40.0)


# ----------------------------------------------------------- lane changes
def two_lane(seed: int, index: int = 0, n_max: int = MAX_OTHERS) -> Scenario:
    rng = scenario_rng(seed, index)
    lanes = _straight_map(two_lane=True)
    by_id = {lane.id: lane for lane in lanes}
    start, target = ("E0", "E1") if rng.uniform() < 0.5 else ("E1", "E0")
    y0 = by_id[start].centerline[0, 1]
    y1 = by_id[target].centerline[0, 1]
    xc = float(rng.uniform(15.0, 40.0))
    span = 20.0
    end = float(rng.uniform(110.0, 140.0))
    xs_pre = np.arange(-20.0, xc, 1.0)
    xs_blend = np.arange(xc, xc + span, 1.0)
    u = (xs_blend - xc) / span
    blend_y = y0 + (y1 - y0) * (3 * u ** 2 - 2 * u ** 3)
    xs_post = np.arange(xc + span, end + 1e-9, 1.0)
    pts = np.vstack([np.column_stack([xs_pre, np.full_like(xs_pre, y0)]),
                     np.column_stack([xs_blend, blend_y]),
                     np.column_stack([xs_post, np.full_like(xs_post, y1)])])
    tags = [start] * len(xs_pre) + [start if ui < 0.5 else target for ui in u] + [target] * len(xs_post)
    routes = {0: Route(pts, tags)}
    vehicles = [VehicleState(0, 0.0, y0, 0.0, float(rng.uniform(3.0, 8.0)))]
    vid = 1
    x = xc + 30.0
    for _ in range(int(rng.integers(0, 3))):
        x += float(rng.uniform(12.0, 30.0))
        vehicles.append(VehicleState(vid, x, y0, 0.0, float(rng.uniform(5.0, 8.0))))
        routes[vid] = _lane_route(by_id[start], -60.0, 250.0)
        vid += 1
    x = xc + 50.0
    for _ in range(int(rng.integers(0, 3))):
        x += float(rng.uniform(12.0, 30.0))
        vehicles.append(VehicleState(vid, x, y1, 0.0, float(rng.uniform(5.0, 8.0))))
        routes[vid] = _lane_route(by_id[target], -60.0, 250.0)
        vid += 1
    for _ in range(int(rng.integers(0, 4))):
        cand = VehicleState(vid, float(rng.uniform(-30.0, 150.0)), LANE_WIDTH / 2, math.pi,
                            float(rng.uniform(3.0, 8.0)))
        if _non_overlapping(vehicles, cand) and len(vehicles) <= n_max:
            vehicles.append(cand)
            routes[vid] = _lane_route(by_id["W0"], 260.0, -50.0)
            vid += 1
    return Scenario(seed=seed, kind="two_lane", lanes=lanes, vehicles=vehicles, routes=routes,
                    max_time=40.0)


# ----------------------------------------------------------- intersection
APPROACHES = ("S", "E", "N", "W")  # heading into the box: north, west, south, east
BOX = 10.0
ROAD_LEN = 90.0
GREEN = 5.0
CLEARANCE = 2.5


def _approach_frame(k: int) -> tuple[np.ndarray, float]:
    """Rotation taking the south approach (driving +y) to approach k."""
    angle = k * math.pi / 2
    return rot(angle), angle


def _intersection_map() -> tuple[list[Lane], dict[str, dict[str, str]]]:
    lanes: list[Lane] = []
    ends = {}
    for k, name in enumerate(APPROACHES):
        r, _ = _approach_frame(k)
        inbound = line((LANE_WIDTH / 2, -BOX - ROAD_LEN), (LANE_WIDTH / 2, -BOX)) @ r.T
        outbound = line((-LANE_WIDTH / 2, -BOX), (-LANE_WIDTH / 2, -BOX - ROAD_LEN)) @ r.T
        lanes.append(Lane(f"{name}_in", inbound))
        lanes.append(Lane(f"{name}_out", outbound))
        ends[name] = (inbound, outbound)
    turns: dict[str, dict[str, str]] = {}
    for k, name in enumerate(APPROACHES):
        inbound = ends[name][0]
        turns[name] = {}
        for move, dk in (("straight", 2), ("left", 3), ("right", 1)):
            dest = APPROACHES[(k + dk) % 4]
            outbound = ends[dest][1]
            p0, p1 = inbound[-1], outbound[0]
            d0 = inbound[-1] - inbound[-2]
            d1 = outbound[1] - outbound[0]
            if move == "straight":
                ctrl = 0.5 * (p0 + p1)
            else:
                a = np.array([d0, -d1]).T
                t = np.linalg.solve(a, p1 - p0)
                ctrl = p0 + t[0] * d0
            cid = f"{name}_in>{dest}_out"
            lanes.append(Lane(cid, bezier(p0, ctrl, p1), connector=True, successors=[f"{dest}_out"]))
            lanes[[ln.id for ln in lanes].index(f"{name}_in")].successors.append(cid)
            turns[name][move] = cid
    return lanes, turns


def _intersection_route(by_id: dict[str, Lane], approach: str, connector: str, start_d: float) -> Route:
    inbound = by_id[f"{approach}_in"].centerline
    dist_to_end = np.linalg.norm(inbound - inbound[-1], axis=1)
    keep = dist_to_end <= start_d + 10.0
    dest = by_id[connector].successors[0]
    return _join((inbound[keep], f"{approach}_in"), (by_id[connector].centerline, connector),
                 (by_id[dest].centerline, dest))


def _zones(offset: float) -> list[StopZone]:
    period = 4 * (GREEN + CLEARANCE)
    zones = []
    for k, name in enumerate(APPROACHES):
        r, _ = _approach_frame(k)
        poly = np.array([[0.0, -BOX - 2.0], [LANE_WIDTH, -BOX - 2.0], [LANE_WIDTH, -BOX], [0.0, -BOX]]) @ r.T
        g0 = k * (GREEN + CLEARANCE)
        intervals = [(g0 + GREEN, period)] + ([(0.0, g0)] if g0 > 0 else [])
        zones.append(StopZone(f"{name}_signal", poly, period, intervals, offset))
    return zones


def _pose_on_inbound(approach: str, d: float) -> tuple[float, float, float]:
    k = APPROACHES.index(approach)
    r, angle = _approach_frame(k)
    x, y = r @ np.array([LANE_WIDTH / 2, -BOX - d])
    return float(x), float(y), wrap_angle(math.pi / 2 + angle)


def intersection(seed: int, index: int = 0, n_max: int = MAX_OTHERS) -> Scenario:
    rng = scenario_rng(seed, index)
    lanes, turns = _intersection_map()
    by_id = {lane.id: lane for lane in lanes}
    moves = ("straight", "left", "right")
    offset = float(rng.uniform(0.0, 4 * (GREEN + CLEARANCE)))
    ego_move = moves[int(rng.integers(0, 3))]
    ego_d = float(rng.uniform(25.0, 45.0))
    x, y, h = _pose_on_inbound("S", ego_d)
    vehicles = [VehicleState(0, x, y, h, float(rng.uniform(2.0, 6.0)))]
    routes = {0: _intersection_route(by_id, "S", turns["S"][ego_move], ego_d)}
    # ego route ends 60 m past the box
    r0 = routes[0]
    cut = np.searchsorted(r0._point_s, r0._point_s[-1] - (ROAD_LEN - 60.0))
    routes[0] = Route(r0.points[:cut], r0.lanes[:cut])
    occupied = {"S": [ego_d]}
    vid = 1
    for _ in range(int(rng.integers(2, 9))):
        if len(vehicles) > n_max:
            break
        approach = APPROACHES[int(rng.integers(0, 4))]
        d = float(rng.uniform(6.0, 60.0))
        if any(abs(d - o) < 12.0 for o in occupied.get(approach, [])):
            continue
        if approach == "S" and d > ego_d:
            continue  # nobody starts behind the ego
        x, y, h = _pose_on_inbound(approach, d)
        ahead = [o for o in occupied.get(approach, []) if o < d]
        gap = d - max(ahead) if ahead else d + 10.0
        cand = VehicleState(vid, x, y, h, _safe_speed(gap, rng))
        if not _non_overlapping(vehicles, cand):
            continue
        move = moves[int(rng.integers(0, 3))]
        vehicles.append(cand)
        routes[vid] = _intersection_route(by_id, approach, turns[approach][move], d)
        occupied.setdefault(approach, []).append(d)
        vid += 1
    ego_ahead = [o for o in occupied["S"] if o < ego_d]
    if ego_ahead:
        vehicles[0].speed = min(vehicles[0].speed, _safe_speed(ego_d - max(ego_ahead), rng))
    return Scenario(seed=seed, kind="intersection", lanes=lanes, vehicles=vehicles, routes=routes,
                    stop_zones=_zones(offset), max_time=75.0)


# --------------------------------------------------------- special suites
def hard_brake(seed: int, index: int = 0) -> Scenario:
    """Ego cruising behind a lead vehicle that brakes fully at a random time."""
    rng = scenario_rng(seed, 10_000 + index)
    lanes = _straight_map()
    e0 = lanes[0]
    speed = float(rng.uniform(6.0, 8.0))
    gap = float(rng.uniform(14.0, 22.0))
    vehicles = [VehicleState(0, 0.0, -LANE_WIDTH / 2, 0.0, speed),
                VehicleState(1, gap, -LANE_WIDTH / 2, 0.0, speed)]
    routes = {0: _lane_route(e0, -20.0, 150.0), 1: _lane_route(e0, -60.0, 250.0)}
    return Scenario(seed=seed, kind="hard_brake", lanes=lanes, vehicles=vehicles, routes=routes,
                    hard_brake={1: float(rng.uniform(1.0, 3.0))}, max_time=15.0)


def empty_road(seed: int, index: int = 0) -> Scenario:
    rng = scenario_rng(seed, 20_000 + index)
    lanes = _straight_map()
    route_len = float(rng.uniform(60.0, 100.0))
    vehicles = [VehicleState(0, 0.0, -LANE_WIDTH / 2, 0.0, float(rng.uniform(0.0, 6.0)))]
    return Scenario(seed=seed, kind="empty", lanes=lanes, vehicles=vehicles,
                    routes={0: _lane_route(lanes[0], -20.0, route_len)}, max_time=40.0)


GENERATORS = {"straight": straight, "two_lane": two_lane, "intersection": intersection,
              "hard_brake": hard_brake, "empty": empty_road}


def generate(kind: str, seed: int, index: int = 0) -> Scenario:
    try:
        return GENERATORS[kind](seed, index)
    except KeyError:
        raise ValueError(f"unknown scenario kind {kind!r}") from None


def suite(seed: int, count: int, kinds=KINDS) -> list[Scenario]:
    """``count`` scenarios cycling through ``kinds``; scenario i uses stream (seed, i)."""
    return [generate(kinds[i % len(kinds)], seed, i) for i in range(count)]


# --------------------------------------------------------------- file I/O
def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": sc.seed,
        "kind": sc.kind,
        "ego_id": sc.ego_id,
        "max_time": sc.max_time,
        "lanes": [{"id": ln.id, "centerline": ln.centerline.tolist(), "width": ln.width,
                   "successors": list(ln.successors), "left": ln.left, "right": ln.right,
                   "connector": ln.connector} for ln in sc.lanes],
        "vehicles": [vehicle_to_dict(v) for v in sc.vehicles],
        "routes": {str(k): {"points": r.points.tolist(), "lanes": list(r.lanes)} for k, r in sc.routes.items()},
        "stop_zones": [{"id": z.id, "polygon": z.polygon.tolist(), "period": z.period,
                        "active_intervals": [list(iv) for iv in z.active_intervals], "offset": z.offset}
                       for z in sc.stop_zones],
        "ego_targets": sc.ego_targets.tolist(),
        "hard_brake": {str(k): t for k, t in sc.hard_brake.items()},
    }


def vehicle_to_dict(v: VehicleState) -> dict:
    return {"id": v.id, "x": v.x, "y": v.y, "heading": v.heading, "speed": v.speed,
            "length": v.length, "width": v.width}


def scenario_from_dict(d: dict) -> Scenario:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioFormatError(f"scenario schema version {version!r}, expected {SCHEMA_VERSION}")
    try:
        lanes = [Lane(ln["id"], np.array(ln["centerline"]), ln["width"], list(ln["successors"]), ln["left"],
                      ln["right"], ln["connector"]) for ln in d["lanes"]]
        vehicles = [VehicleState(**v) for v in d["vehicles"]]
        routes = {int(k): Route(np.array(r["points"]), list(r["lanes"])) for k, r in d["routes"].items()}
        zones = [StopZone(z["id"], np.array(z["polygon"]), z["period"], [tuple(iv) for iv in z["active_intervals"]],
                          z["offset"]) for z in d["stop_zones"]]
        return Scenario(seed=d["seed"], kind=d["kind"], lanes=lanes, vehicles=vehicles, routes=routes,
                        stop_zones=zones, ego_id=d["ego_id"], ego_targets=np.array(d["ego_targets"]),
                        hard_brake={int(k): t for k, t in d["hard_brake"].items()}, max_time=d["max_time"])
    except (KeyError, TypeError) as exc:
        raise ScenarioFormatError(f"malformed scenario: {exc}") from exc


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc)))


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
