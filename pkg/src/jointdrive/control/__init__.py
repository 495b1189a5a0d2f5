from .agents import ModelAgent, RouteAgent, constant_velocity, route_plan, stop_flag, to_ego_frame
from .controller import (FORCE_STOP, CollisionReport, ControlCommand, Controller, ControllerConfig, PIDState,
                         collision_check, menger_curvature, preview_point)

__all__ = [
    "FORCE_STOP", "CollisionReport", "ControlCommand", "Controller", "ControllerConfig", "ModelAgent", "PIDState",
    "RouteAgent", "collision_check", "constant_velocity", "menger_curvature", "preview_point", "route_plan",
    "stop_flag", "to_ego_frame",
]
