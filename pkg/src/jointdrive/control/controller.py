"""Collision-aware waypoint tracker: disc collision check, max-curvature preview point, two PIDs."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..sim.world import Controls


@dataclass
class ControlCommand:
    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0

    def __post_init__(self):
        vals = (self.steer, self.throttle, self.brake)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite command {vals}")
        self.steer = min(1.0, max(-1.0, float(self.steer)))
        self.throttle = min(1.0, max(0.0, float(self.throttle)))
        self.brake = min(1.0, max(0.0, float(self.brake)))
        if self.throttle > 0.0 and self.brake > 0.0:
            raise ValueError("throttle and brake are mutually exclusive")

    def to_controls(self) -> Controls:
        return Controls(self.steer, self.throttle, self.brake)


FORCE_STOP = ControlCommand(0.0, 0.0, 1.0)


@dataclass
class PIDState:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    integral_clamp: float = 5.0
    integral: float = 0.0
    prev_error: float | None = None

    def step(self, error: float, dt: float) -> float:
        if not (math.isfinite(error) and dt > 0):
            raise ValueError(f"PID needs a finite error and positive dt, got {error}, {dt}")
        self.integral = min(self.integral_clamp, max(-self.integral_clamp, self.integral + error * dt))
        deriv = 0.0 if self.prev_error is None else (error - self.prev_error) / dt
        self.prev_error = error
        return self.kp * error + self.ki * self.integral + self.kd * deriv

    def reset(self) -> None:
        self.integral, self.prev_error = 0.0, None


@dataclass
class ControllerConfig:
    margin: float = 0.5
    horizon_gate: int = 6
    lateral: tuple = (1.2, 0.0, 0.2)
    longitudinal: tuple = (0.5, 0.05, 0.0)
    integral_clamp: float = 5.0
    max_speed: float = 8.0
    dt_wp: float = 0.5
    dt: float = 0.1
    collision_check: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown controller keys {unknown}")
        d = dict(d)
        for k in ("lateral", "longitudinal"):
            if k in d:
                d[k] = tuple(float(x) for x in d[k])
                if len(d[k]) != 3:
                    raise ValueError(f"{k} gains are (kp, ki, kd)")
        return cls(**d)


@dataclass
class CollisionReport:
    risk: bool
    vehicle: int | None = None
    step: int | None = None


def collision_check(plan, predictions, radii, ego_radius: float, margin: float = 0.5,
                    horizon: int = 6) -> CollisionReport:
    """Disc test between the plan and each ego-frame prediction at equal time steps.

    Step t (1-based) collides when the centres are closer than
    ego_radius + r_i + margin; only the first ``horizon`` steps count.
    """
    plan = np.asarray(plan, dtype=float)
    preds = [np.asarray(p, dtype=float) for p in predictions]
    radii = list(radii)
    if len(radii) != len(preds):
        raise ValueError(f"{len(preds)} predictions but {len(radii)} radii")
    for i, p in enumerate(preds):
        if p.shape != plan.shape:
            raise ValueError(f"prediction {i} has shape {p.shape}, plan has {plan.shape}")
    n = min(horizon, len(plan))
    for t in range(n):
        for i, p in enumerate(preds):
            if math.hypot(*(plan[t] - p[t])) < ego_radius + radii[i] + margin:
                return CollisionReport(True, i, t + 1)
    return CollisionReport(False)


def menger_curvature(traj) -> np.ndarray:
    """kappa = 4 * area / (|a||b||c|) at each interior waypoint; 0 at the ends and on degenerate triples."""
    p = np.asarray(traj, dtype=float)
    k = np.zeros(len(p))
    for t in range(1, len(p) - 1):
        a, b, c = p[t - 1], p[t], p[t + 1]
        la, lb, lc = np.linalg.norm(b - a), np.linalg.norm(c - b), np.linalg.norm(c - a)
        if min(la, lb, lc) < 1e-6:
            continue
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        k[t] = 2.0 * abs(cross) / (la * lb * lc)  # 4 * (|cross| / 2)
    return k


def preview_point(traj) -> tuple[int, np.ndarray]:
    """(index, waypoint) of maximal curvature among interior waypoints with index >= 2.

    Ties and the all-straight case resolve to the earliest candidate; fewer
    than three waypoints fall back to the last one.
    """
    p = np.asarray(traj, dtype=float)
    if len(p) < 3:
        return len(p) - 1, p[-1]
    cand = range(2, len(p) - 1)
    if len(cand) == 0:
        return len(p) - 1, p[-1]
    k = menger_curvature(p)
    best = max(cand, key=lambda t: (k[t], -t))
    return best, p[best]


@dataclass
class Controller:
    config: ControllerConfig = field(default_factory=ControllerConfig)

    def __post_init__(self):
        c = self.config
        self.lateral = PIDState(*c.lateral, integral_clamp=c.integral_clamp)
        self.longitudinal = PIDState(*c.longitudinal, integral_clamp=c.integral_clamp)
        self.last_report = CollisionReport(False)

    def reset(self) -> None:
        self.lateral.reset()
        self.longitudinal.reset()

    def target_speed(self, plan: np.ndarray) -> float:
        return min(self.config.max_speed, float(np.linalg.norm(plan[-1])) / (len(plan) * self.config.dt_wp))

    def step(self, plan, predictions, radii, ego_radius: float, speed: float,
             stop_flag: bool = False) -> ControlCommand:
        """One control tick from an ego-frame plan and ego-frame predictions."""
        plan = np.asarray(plan, dtype=float)
        if not (np.all(np.isfinite(plan)) and math.isfinite(speed)):
            raise ValueError("controller inputs must be finite")
        for p in predictions:
            if not np.all(np.isfinite(p)):
                raise ValueError("controller inputs must be finite")
        c = self.config
        self.last_report = CollisionReport(False)
        if stop_flag:
            return FORCE_STOP
        if c.collision_check:
            self.last_report = collision_check(plan, predictions, radii, ego_radius, c.margin, c.horizon_gate)
            if self.last_report.risk:
                return FORCE_STOP
        _, pt = preview_point(plan)
        heading_err = math.atan2(pt[1], pt[0]) if np.linalg.norm(pt) > 1e-6 else 0.0
        steer = self.lateral.step(heading_err, c.dt)
        u = self.longitudinal.step(self.target_speed(plan) - speed, c.dt)
        if u >= 0.0:
            return ControlCommand(steer, u, 0.0)
        return ControlCommand(steer, 0.0, -u)
