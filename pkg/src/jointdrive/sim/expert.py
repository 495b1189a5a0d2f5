"""Scripted expert: IDM car following plus pure-pursuit route tracking."""
from __future__ import annotations

import math
from enum import IntEnum

import numpy as np

from .geometry import box_corners, points_in_polygon, segment_distances, to_local, wrap_angle
from .world import BRAKE_DECEL, MAX_WHEEL_ANGLE, THROTTLE_ACCEL, WHEELBASE, Controls, World


class Behavior(IntEnum):
    GO_STRAIGHT = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    FOLLOWING = 3
    CHANGE_LEFT = 4
    CHANGE_RIGHT = 5


DESIRED_SPEED = 8.0
HEADWAY = 1.5
MIN_GAP = 2.0
MAX_ACCEL = 3.0
COMFORT_DECEL = 4.0
IDM_DELTA = 4
LOOKAHEAD = 5.0
LAT_ACCEL = 3.0
CURVE_BRAKE = 2.0
SCAN_RANGE = 50.0
LABEL_RANGE = 20.0
TURN_ANGLE = math.radians(30.0)
ZONE_ANTICIPATION = 2.0


def idm_accel(v: float, v0: float, gap: float, dv: float) -> float:
    s_star = MIN_GAP + max(0.0, v * HEADWAY + v * dv / (2.0 * math.sqrt(MAX_ACCEL * COMFORT_DECEL)))
    free = 1.0 - (v / max(v0, 1e-3)) ** IDM_DELTA
    if not math.isfinite(gap):
        return MAX_ACCEL * free
    return MAX_ACCEL * (free - (s_star / max(gap, 0.1)) ** 2)


def find_leader(world: World, vid: int, scan: float = SCAN_RANGE) -> tuple[float, float, int | None]:
    """Nearest vehicle whose footprint intrudes on ``vid``'s path ahead.

    Returns (bumper gap along the path, leader speed along the path, leader id);
    gap is inf when the path is clear.
    """
    me = world.vehicles[vid]
    route = world.route(vid).polyline
    s_me = world.progress[vid]
    a, b, s0 = route.window(s_me, s_me + scan)
    if len(a) == 0:
        return math.inf, 0.0, None
    band = me.width / 2.0 + 0.4
    best = (math.inf, 0.0, None)
    ch, sh = math.cos(me.heading), math.sin(me.heading)
    for other in world.others(vid):
        dx, dy = other.x - me.x, other.y - me.y
        if math.hypot(dx, dy) > scan + other.length or dx * ch + dy * sh < -other.radius:
            continue
        c = box_corners(other.x, other.y, other.heading, other.length, other.width)
        pts = np.vstack([c, other.xy, 0.5 * (c[0] + c[1]), 0.5 * (c[2] + c[3])])
        ahead = to_local(pts, me.xy, me.heading)[:, 0] > 0.0
        if not ahead.any():
            continue
        d, t = segment_distances(pts[ahead], a, b)
        k = d.argmin(axis=1)
        dk = d[np.arange(len(k)), k]
        inside = dk < band
        if not inside.any():
            continue
        s_proj = s0[k] + t[np.arange(len(k)), k] * np.linalg.norm(b[k] - a[k], axis=1)
        s_hit = float(s_proj[inside].min())
        gap = s_hit - (s_me + me.length / 2.0)
        if gap < best[0]:
            v_along = other.speed * math.cos(other.heading - route.heading_at(s_hit))
            best = (gap, max(0.0, v_along), other.id)
    return best


def _zone_entry(world: World, vid: int) -> dict[str, float]:
    cache = world.scenario.cache.setdefault("zone_entry", {})
    if vid not in cache:
        route = world.route(vid)
        entries = {}
        for z in world.scenario.stop_zones:
            inside = points_in_polygon(route.points, z.polygon)
            if inside.any():
                entries[z.id] = float(route._point_s[int(np.argmax(inside))])
        cache[vid] = entries
    return cache[vid]


def stop_gap(world: World, vid: int) -> float:
    """Gap to the nearest stop zone the vehicle must respect, inf if none."""
    me = world.vehicles[vid]
    s_front = world.progress[vid] + me.length / 2.0
    best = math.inf
    zones = {z.id: z for z in world.scenario.stop_zones}
    for zid, s_entry in _zone_entry(world, vid).items():
        gap = s_entry - s_front - 0.5
        if s_front >= s_entry or gap > SCAN_RANGE:
            continue
        z = zones[zid]
        now = z.active(world.time)
        if not (now or z.active(world.time + ZONE_ANTICIPATION)):
            continue
        if not now and me.speed ** 2 / (2.0 * max(gap, 0.01)) > 5.0:
            continue  # cannot stop comfortably before the change; clear the zone instead
        best = min(best, gap)
    return best


def curve_speed(world: World, vid: int) -> float:
    route = world.route(vid)
    s_me = world.progress[vid]
    pl = route.polyline
    lo = pl._seg_index(s_me)
    hi = pl._seg_index(s_me + 30.0) + 1
    kappa = route.curvature[lo:hi]
    dist = np.maximum(pl.s[lo:hi] - s_me, 0.0)
    v_cap = np.sqrt(LAT_ACCEL / np.maximum(kappa, 1e-6))
    allowed = np.sqrt(v_cap ** 2 + 2.0 * CURVE_BRAKE * dist)
    return float(min(DESIRED_SPEED, allowed.min())) if len(allowed) else DESIRED_SPEED


def pure_pursuit_steer(world: World, vid: int, lookahead: float = LOOKAHEAD) -> float:
    me = world.vehicles[vid]
    target = world.route(vid).polyline.point_at(world.progress[vid] + lookahead)
    lx, ly = to_local(target, me.xy, me.heading)
    ld = max(math.hypot(lx, ly), 1e-3)
    alpha = math.atan2(ly, lx)
    delta = math.atan2(2.0 * WHEELBASE * math.sin(alpha), ld)
    return max(-1.0, min(1.0, delta / MAX_WHEEL_ANGLE))


def accel_to_controls(accel: float, steer: float) -> Controls:
    if accel >= 0.0:
        return Controls(steer, min(1.0, accel / THROTTLE_ACCEL), 0.0)
    return Controls(steer, 0.0, min(1.0, -accel / BRAKE_DECEL))


def behavior_label(world: World, vid: int, leader_gap: float | None = None) -> Behavior:
    route = world.route(vid)
    s = world.progress[vid]
    pl = route.polyline
    dpsi = wrap_angle(pl.heading_at(min(s + LABEL_RANGE, pl.length - 1e-6)) - pl.heading_at(s))
    if dpsi > TURN_ANGLE:
        return Behavior.TURN_LEFT
    if dpsi < -TURN_ANGLE:
        return Behavior.TURN_RIGHT
    lane_now = world.scenario.lane_by_id.get(route.lane_at(s))
    if lane_now is not None:
        for lane in route.lanes_at(s + np.arange(1.0, LABEL_RANGE + 1.0, 1.0)):
            if lane_now.left is not None and lane == lane_now.left:
                return Behavior.CHANGE_LEFT
            if lane_now.right is not None and lane == lane_now.right:
                return Behavior.CHANGE_RIGHT
    if leader_gap is None:
        leader_gap = find_leader(world, vid)[0]
    if leader_gap < LABEL_RANGE:
        return Behavior.FOLLOWING
    return Behavior.GO_STRAIGHT


def expert_policy(world: World, vid: int) -> tuple[Controls, Behavior]:
    """Controls for ``vid`` and the behavior label describing its intent."""
    controls, gap = _expert(world, vid)
    return controls, behavior_label(world, vid, gap)


def expert_controls(world: World, vid: int) -> Controls:
    return _expert(world, vid)[0]


def _expert(world: World, vid: int) -> tuple[Controls, float]:
    if vid not in world.scenario.routes:
        raise KeyError(f"vehicle {vid} has no route")
    me = world.vehicles[vid]
    route = world.route(vid)
    gap, v_lead, _ = find_leader(world, vid)
    v0 = curve_speed(world, vid)
    accel = idm_accel(me.speed, v0, gap, me.speed - v_lead)
    zgap = stop_gap(world, vid)
    if math.isfinite(zgap):
        accel = min(accel, idm_accel(me.speed, v0, zgap, me.speed))
    end_gap = route.length - (world.progress[vid] + me.length / 2.0)
    if vid != world.scenario.ego_id and end_gap < SCAN_RANGE:
        # background traffic halts at the end of its route; the ego's episode ends at its goal
        accel = min(accel, idm_accel(me.speed, v0, end_gap, me.speed))
    return accel_to_controls(accel, pure_pursuit_steer(world, vid)), gap
