"""Dynamic Window Approach local planner.

Candidate (v, omega) pairs are sampled on a grid over the velocities
reachable in one control interval. Each candidate arc is rolled out over a
short horizon for the heading term, and its curve is traced against the
obstacle points of a noise-free lidar scan to get the free arc length.
Velocities that cannot brake within that length are discarded and the rest
are scored by heading-to-target, free arc length and speed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .sensors import LidarConfig, cast_lidar
from .world import COLLISION_DISTANCE, DEFAULT_DT, OMEGA_MAX, V_MAX, WorldState


@dataclass(frozen=True)
class DWAConfig:
    v_max: float = V_MAX
    omega_max: float = OMEGA_MAX
    accel_v: float = 0.5
    accel_omega: float = 1.0
    v_samples: int = 11
    omega_samples: int = 21
    horizon: float = 2.0
    dt: float = DEFAULT_DT
    w_heading: float = 1.0
    w_clearance: float = 0.4
    w_speed: float = 0.2
    clearance_cap: float = 2.0
    arc_step: float = 0.04
    arc_cap: float = 3.0
    collision_distance: float = COLLISION_DISTANCE
    safety_margin: float = 0.01
    lidar: LidarConfig = LidarConfig()

    def __post_init__(self):
        if self.v_samples < 2 or self.omega_samples < 2:
            raise ValueError("velocity grid needs at least 2 samples per axis")
        if min(self.accel_v, self.accel_omega, self.dt, self.clearance_cap, self.arc_step, self.arc_cap) <= 0:
            raise ValueError("accelerations, dt, clearance_cap and arc sampling must be positive")
        steps = self.horizon / self.dt
        if self.horizon <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ValueError("horizon must be a positive multiple of dt")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class DWAResult:
    action: np.ndarray
    recovery: bool
    v_grid: np.ndarray
    omega_grid: np.ndarray
    scores: np.ndarray  # (v_samples, omega_samples), -inf where inadmissible


def dynamic_window(velocity, config: DWAConfig = DWAConfig()):
    """Reachable ``(v_lo, v_hi, w_lo, w_hi)`` after one interval, intersected with the bounds."""
    v0, w0 = velocity
    dv = config.accel_v * config.dt
    dw = config.accel_omega * config.dt
    v_lo = min(max(0.0, v0 - dv), config.v_max)
    v_hi = max(min(config.v_max, v0 + dv), 0.0)
    w_lo = min(max(-config.omega_max, w0 - dw), config.omega_max)
    w_hi = max(min(config.omega_max, w0 + dw), -config.omega_max)
    return v_lo, v_hi, w_lo, w_hi


def velocity_grid(velocity, config: DWAConfig = DWAConfig()):
    v_lo, v_hi, w_lo, w_hi = dynamic_window(velocity, config)
    return np.linspace(v_lo, v_hi, config.v_samples), np.linspace(w_lo, w_hi, config.omega_samples)


def rollout_arcs(v_grid, w_grid, steps: int, dt: float):
    """Robot-frame poses ``(x, y, theta)`` at t = dt..steps*dt for every grid cell.

    Returns arrays of shape (V, W, steps) using the exact constant-twist arc.
    """
    v = np.asarray(v_grid)[:, None, None]
    w = np.asarray(w_grid)[None, :, None]
    t = dt * np.arange(1, steps + 1)[None, None, :]
    theta = w * t
    half = 0.5 * theta
    # chord length v t sinc(w t / 2) along the mid-arc heading
    chord = v * t * np.sinc(half / np.pi)
    x = chord * np.cos(half)
    y = chord * np.sin(half)
    return x, y, np.broadcast_to(theta, x.shape)


def obstacle_points(world: WorldState, robot_index: int, config: DWAConfig = DWAConfig()) -> np.ndarray:
    """Robot-frame (x, y) of every noise-free lidar return closer than max range."""
    ranges = cast_lidar(world, robot_index, config.lidar)
    angles = config.lidar.angles()
    hit = ranges < config.lidar.max_range
    return np.stack([ranges[hit] * np.cos(angles[hit]), ranges[hit] * np.sin(angles[hit])], axis=1)


def target_point(world: WorldState, robot_index: int) -> tuple[float, float]:
    """Active entry of the goal chain (waypoints, then goal).

    A waypoint counts as passed once the robot is closer to the following
    target than the waypoint itself is.
    """
    robot = world.robots[robot_index]
    chain = list(robot.waypoints) + [robot.goal]
    for k in range(len(chain) - 1):
        nxt = chain[k + 1]
        if math.dist(robot.position, nxt) >= math.dist(chain[k], nxt):
            return tuple(chain[k])
    return tuple(robot.goal)


def free_arc_length(points: np.ndarray, v_grid, w_grid, config: DWAConfig = DWAConfig()) -> np.ndarray:
    """Arc length each candidate's curve can be followed before entering collision distance.

    The curve depends only on curvature omega / v. It is sampled every
    ``arc_step`` metres up to ``arc_cap`` (or half a turn for tight curves);
    pure rotations (v = 0) get 0. Shape (V, W).
    """
    v = np.asarray(v_grid, dtype=np.float64)[:, None]
    w = np.asarray(w_grid, dtype=np.float64)[None, :]
    moving = v > 0.0
    kappa = np.where(moving, w / np.where(moving, v, 1.0), 0.0)
    k = np.arange(1, int(round(config.arc_cap / config.arc_step)) + 1)
    s = config.arc_step * k[None, None, :]
    half = 0.5 * kappa[:, :, None] * s
    chord = s * np.sinc(half / np.pi)
    x, y = chord * np.cos(half), chord * np.sin(half)
    if len(points):
        limit = config.collision_distance + config.safety_margin
        d, _ = cKDTree(points).query(np.stack([x.ravel(), y.ravel()], axis=1), distance_upper_bound=limit)
        inside = d.reshape(x.shape) < limit
    else:
        inside = np.zeros(x.shape, dtype=bool)
    first = np.where(inside.any(axis=2), inside.argmax(axis=2), len(k))
    free = config.arc_step * first
    with np.errstate(divide="ignore"):
        half_turn = np.where(kappa != 0.0, np.pi / np.abs(kappa), np.inf)
    free = np.minimum(free, half_turn)
    return np.where(moving, free, 0.0)


def heading_score(target_rel, v_grid, w_grid, config: DWAConfig = DWAConfig()) -> np.ndarray:
    """1 - |bearing error| / pi along each horizon rollout.

    The bearing is measured one sample before the rollout's closest approach
    to the target, so arcs that would run past the target inside the horizon
    are judged by how well they line up with it, not by the overshoot.
    """
    x, y, th = rollout_arcs(v_grid, w_grid, config.steps, config.dt)
    gx, gy = target_rel
    dist = np.hypot(gx - x, gy - y)
    k = np.maximum(dist.argmin(axis=2) - 1, 0)[:, :, None]
    px, py, pth = (np.take_along_axis(a, k, axis=2)[:, :, 0] for a in (x, y, th))
    err = np.arctan2(gy - py, gx - px) - pth
    err = np.abs((err + np.pi) % (2.0 * np.pi) - np.pi)
    return 1.0 - err / np.pi


def score_grid(points: np.ndarray, target_rel, v_grid, w_grid, config: DWAConfig = DWAConfig()):
    """Score every grid cell; inadmissible cells get ``-inf``.

    ``points`` are robot-frame obstacle points, ``target_rel`` the robot-frame
    target position. A velocity is admissible when its free arc length covers
    one control step plus the braking distance ``v^2 / (2 a)``.
    """
    v = np.asarray(v_grid, dtype=np.float64)[:, None]
    free = free_arc_length(points, v_grid, w_grid, config)
    stop = v * v / (2.0 * config.accel_v) + v * config.dt
    admissible = (v <= 0.0) | (free >= stop)

    heading = heading_score(target_rel, v_grid, w_grid, config)
    # only the stretch covered within the horizon counts, and nothing beyond the target
    cap = max(min(config.clearance_cap, math.hypot(*target_rel)), config.arc_step)
    clearance = np.minimum(np.minimum(free, v * config.horizon), cap) / cap
    speed = np.broadcast_to(v / config.v_max, heading.shape)
    score = config.w_heading * heading + config.w_clearance * clearance + config.w_speed * speed
    return np.where(admissible, score, -np.inf)


def plan(world: WorldState, robot_index: int, config: DWAConfig = DWAConfig()) -> DWAResult:
    robot = world.robots[robot_index]
    v_grid, w_grid = velocity_grid(robot.velocity, config)
    tx, ty = target_point(world, robot_index)
    dx, dy = tx - robot.position[0], ty - robot.position[1]
    c, s = math.cos(robot.heading), math.sin(robot.heading)
    target_rel = (c * dx + s * dy, -s * dx + c * dy)
    scores = score_grid(obstacle_points(world, robot_index, config), target_rel, v_grid, w_grid, config)
    if not np.isfinite(scores).any():
        return DWAResult(np.array([0.0, float(w_grid[-1])]), True, v_grid, w_grid, scores)
    k = int(np.argmax(scores))
    i, j = divmod(k, len(w_grid))
    return DWAResult(np.array([float(v_grid[i]), float(w_grid[j])]), False, v_grid, w_grid, scores)


def dwa_plan(world: WorldState, robot_index: int, config: DWAConfig = DWAConfig()) -> np.ndarray:
    """DWA action ``(v, omega)`` for one robot."""
    return plan(world, robot_index, config).action

