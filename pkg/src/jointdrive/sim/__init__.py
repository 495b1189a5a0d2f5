from .episode import (EpisodeLog, compute_metrics, rollout_labels, rollout_states, run_episode)
from .expert import Behavior, expert_policy
from .scenarios import generate, load_scenario, save_scenario, suite
from .world import Controls, Scenario, VehicleState, World

__all__ = ["Behavior", "Controls", "EpisodeLog", "Scenario", "VehicleState", "World", "compute_metrics",
           "expert_policy", "generate", "load_scenario", "rollout_labels", "rollout_states", "run_episode",
           "save_scenario", "suite"]
