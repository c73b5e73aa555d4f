"""Four-term navigation reward: goal/waypoint progress, collision, oscillation, safe distance."""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class RewardConfig:
    r_wp: float = 10.0
    r_goal: float = 20.0
    r_collision: float = -20.0
    progress_gain: float = 2.5
    goal_threshold: float = 0.1
    collision_threshold: float = 0.3
    osc_threshold: float = 0.3
    osc_gain: float = 0.1
    safedist_gain: float = 0.1
    safe_radius: float = 1.0
    enable_oscillation_penalty: bool = True
    enable_safedist_penalty: bool = True
    # Literal |R_Smax - R_min| everywhere, including far from obstacles.
    ungated_safedist: bool = False

    def __post_init__(self):
        for name in ("goal_threshold", "collision_threshold", "osc_threshold", "safe_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"RewardConfig.{name} must be positive")


DEFAULT_REWARD = RewardConfig()


@dataclass(frozen=True)
class RewardBreakdown:
    r_g: float
    r_c: float
    r_osc: float
    r_safedist: float

    @property
    def total(self) -> float:
        return self.r_g + self.r_c + self.r_osc + self.r_safedist


def goal_reward(prev_pos, cur_pos, goal, waypoints=(), config: RewardConfig = DEFAULT_REWARD):
    """Goal / waypoint / progress term.

    Returns ``(reward, remaining_waypoints)``; the active waypoint is consumed
    when it pays out, so each waypoint rewards at most once.
    """
    waypoints = tuple(waypoints)
    d_cur = math.dist(cur_pos, goal)
    if d_cur < config.goal_threshold:
        return config.r_goal, waypoints
    if waypoints and math.dist(cur_pos, waypoints[0]) < config.goal_threshold:
        return config.r_wp, waypoints[1:]
    return config.progress_gain * (math.dist(prev_pos, goal) - d_cur), waypoints


def collision_penalty(center_distance: float, config: RewardConfig = DEFAULT_REWARD) -> float:
    """``r_collision`` when the robot center is closer than the threshold to an obstacle."""
    return config.r_collision if center_distance < config.collision_threshold else 0.0


def oscillation_penalty(omega: float, config: RewardConfig = DEFAULT_REWARD) -> float:
    if not config.enable_oscillation_penalty:
        return 0.0
    if abs(omega) > config.osc_threshold:
        return -config.osc_gain * abs(omega)
    return 0.0


def safedist_penalty(r_min: float, config: RewardConfig = DEFAULT_REWARD) -> float:
    """Penalty for body clearance ``r_min`` inside the safe radius."""
    if not config.enable_safedist_penalty:
        return 0.0
    if config.ungated_safedist:
        if math.isinf(r_min):
            return 0.0
        return -config.safedist_gain * abs(config.safe_radius - r_min)
    if r_min < config.safe_radius:
        return -config.safedist_gain * abs(config.safe_radius - r_min)
    return 0.0


def total_reward(prev_pos, cur_pos, goal, waypoints, center_distance, omega, r_min,
                 config: RewardConfig = DEFAULT_REWARD):
    """Evaluate all four terms for one step.

    Returns ``(RewardBreakdown, remaining_waypoints)``.
    """
    r_g, remaining = goal_reward(prev_pos, cur_pos, goal, waypoints, config)
    breakdown = RewardBreakdown(
        r_g=r_g,
        r_c=collision_penalty(center_distance, config),
        r_osc=oscillation_penalty(omega, config),
        r_safedist=safedist_penalty(max(r_min, 0.0), config),
    )
    return breakdown, remaining
