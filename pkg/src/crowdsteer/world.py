"""2-D world state, unicycle kinematics, scripted pedestrians, proximity queries.

Everything here is a value: stepping returns new objects and never mutates its
inputs, so worlds can be handed to parallel workers freely.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels

V_MAX = 1.0
OMEGA_MAX = 0.4
COLLISION_DISTANCE = 0.3
ROBOT_RADIUS = 0.2
ROBOT_HEIGHT = 0.5
PEDESTRIAN_RADIUS = 0.3
PEDESTRIAN_HEIGHT = 1.7
PEDESTRIAN_MAX_SPEED = 1.6
WAYPOINT_REACHED = 0.1
DEFAULT_DT = 0.1


class ContractViolation(ValueError):
    """Raised when a caller breaks a documented precondition."""


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Segment:
    x0: float
    y0: float
    x1: float
    y1: float
    height: float = 2.5


@dataclass(frozen=True)
class Disc:
    x: float
    y: float
    radius: float
    height: float = 1.0


class Geometry:
    """Static obstacles packed into read-only arrays for the kernels.

    ``segments`` rows are ``x0, y0, x1, y1, height``; ``discs`` rows are
    ``x, y, radius, height``.
    """

    __slots__ = ("segments", "discs")

    def __init__(self, segments: Sequence[Segment] = (), discs: Sequence[Disc] = ()):
        seg = np.array([[s.x0, s.y0, s.x1, s.y1, s.height] for s in segments],
                       dtype=np.float64).reshape(-1, 5)
        dsc = np.array([[d.x, d.y, d.radius, d.height] for d in discs],
                       dtype=np.float64).reshape(-1, 4)
        if np.any(seg[:, 4] <= 0) or np.any(dsc[:, 3] <= 0):
            raise ContractViolation("obstacle heights must be positive")
        if np.any(dsc[:, 2] <= 0):
            raise ContractViolation("disc radii must be positive")
        seg.flags.writeable = False
        dsc.flags.writeable = False
        self.segments = seg
        self.discs = dsc

    @property
    def is_empty(self) -> bool:
        return self.segments.shape[0] == 0 and self.discs.shape[0] == 0

    def segment_list(self) -> list[Segment]:
        return [Segment(*map(float, row)) for row in self.segments]

    def disc_list(self) -> list[Disc]:
        return [Disc(*map(float, row)) for row in self.discs]

    def __eq__(self, other):
        if not isinstance(other, Geometry):
            return NotImplemented
        return (np.array_equal(self.segments, other.segments)
                and np.array_equal(self.discs, other.discs))

    def __hash__(self):
        return hash((self.segments.tobytes(), self.discs.tobytes()))

    def __repr__(self):
        return f"Geometry({self.segments.shape[0]} segments, {self.discs.shape[0]} discs)"


EMPTY_GEOMETRY = Geometry()


@dataclass(frozen=True)
class RobotState:
    position: tuple[float, float]
    heading: float
    goal: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    radius: float = ROBOT_RADIUS
    waypoints: tuple[tuple[float, float], ...] = ()
    height: float = ROBOT_HEIGHT

    def __post_init__(self):
        if self.radius <= 0:
            raise ContractViolation(f"robot radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class PedestrianState:
    position: tuple[float, float]
    speed: float
    waypoints: tuple[tuple[float, float], ...] = ()
    radius: float = PEDESTRIAN_RADIUS
    height: float = PEDESTRIAN_HEIGHT
    loop: bool = False

    def __post_init__(self):
        if not 0.0 <= self.speed <= PEDESTRIAN_MAX_SPEED:
            raise ContractViolation(f"pedestrian speed {self.speed} outside [0, {PEDESTRIAN_MAX_SPEED}]")
        if self.radius <= 0:
            raise ContractViolation("pedestrian radius must be positive")


@dataclass(frozen=True)
class WorldState:
    geometry: Geometry = EMPTY_GEOMETRY
    robots: tuple[RobotState, ...] = ()
    pedestrians: tuple[PedestrianState, ...] = ()
    step_count: int = 0
    dt: float = DEFAULT_DT
    _cache: dict = field(default_factory=dict, init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise ContractViolation(f"dt must be positive, got {self.dt}")
        if self.step_count < 0:
            raise ContractViolation("step_count must be non-negative")

    @property
    def time(self) -> float:
        return self.step_count * self.dt

    def obstacle_arrays(self, exclude_robot: int | None = None):
        """All obstacles as kernel arrays, excluding robot ``exclude_robot``.

        Pedestrians and the other robots are appended to the static discs.
        """
        key = ("arrays", exclude_robot)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        dyn = [(p.position[0], p.position[1], p.radius, p.height) for p in self.pedestrians]
        dyn += [(r.position[0], r.position[1], r.radius, r.height)
                for j, r in enumerate(self.robots) if j != exclude_robot]
        if dyn:
            discs = np.vstack([self.geometry.discs, np.array(dyn, dtype=np.float64)])
        else:
            discs = self.geometry.discs
        out = (self.geometry.segments, discs)
        self._cache[key] = out
        return out

    def with_robots(self, robots: Sequence[RobotState]) -> "WorldState":
        return replace(self, robots=tuple(robots))


def step_robot(state: RobotState, action, dt: float) -> RobotState:
    """Exact unicycle integration of ``(v, omega)`` over ``dt``.

    The robot moves along the chord of the circular arc, so constant commands
    trace the closed-form circle of radius ``v / omega`` exactly.
    """
    v, w = float(action[0]), float(action[1])
    if not (0.0 <= v <= V_MAX and -OMEGA_MAX <= w <= OMEGA_MAX):
        raise ContractViolation(f"action ({v}, {w}) outside [0, {V_MAX}] x [-{OMEGA_MAX}, {OMEGA_MAX}]")
    half = 0.5 * w * dt
    sinc = math.sin(half) / half if abs(half) > 1e-12 else 1.0
    chord = v * dt * sinc
    mid = state.heading + half
    x = state.position[0] + chord * math.cos(mid)
    y = state.position[1] + chord * math.sin(mid)
    return replace(state, position=(x, y), heading=normalize_angle(state.heading + w * dt),
                   velocity=(v, w))


def _advance_pedestrian(p: PedestrianState, dt: float) -> PedestrianState:
    queue = list(p.waypoints)
    x, y = p.position
    for _ in range(len(queue)):
        if not queue or math.hypot(queue[0][0] - x, queue[0][1] - y) >= WAYPOINT_REACHED:
            break
        done = queue.pop(0)
        if p.loop:
            queue.append(done)
    if queue:
        tx, ty = queue[0]
        dist = math.hypot(tx - x, ty - y)
        if dist > 0.0:
            step = min(p.speed * dt, dist)
            x += step * (tx - x) / dist
            y += step * (ty - y) / dist
    return replace(p, position=(x, y), waypoints=tuple(queue))


def advance_pedestrians(world: WorldState) -> WorldState:
    """Move every pedestrian one step along its waypoint queue.

    Pedestrians ignore robots entirely; robots are untouched. Idle pedestrians
    (empty queue) hold position.
    """
    peds = tuple(_advance_pedestrian(p, world.dt) for p in world.pedestrians)
    return replace(world, pedestrians=peds)


def step_world(world: WorldState, actions) -> WorldState:
    """Advance the clock one step: robots with an action move, then pedestrians.

    ``actions[i]`` is ``None`` for a robot that is parked (finished episode).
    """
    robots = tuple(r if a is None else step_robot(r, a, world.dt)
                   for r, a in zip(world.robots, actions))
    moved = replace(world, robots=robots, step_count=world.step_count + 1)
    return advance_pedestrians(moved)


def nearest_obstacle_distance(world: WorldState, robot_index: int) -> float:
    """Distance from the robot center to the nearest obstacle point (0 inside a disc)."""
    segs, discs = world.obstacle_arrays(exclude_robot=robot_index)
    if segs.shape[0] == 0 and discs.shape[0] == 0:
        return math.inf
    p = np.array([world.robots[robot_index].position], dtype=np.float64)
    return float(kernels.points_min_distance(p, segs, discs)[0])


def min_obstacle_distance(world: WorldState, robot_index: int) -> float:
    """Clearance between the robot body and the nearest obstacle (``inf`` if none)."""
    return nearest_obstacle_distance(world, robot_index) - world.robots[robot_index].radius


def check_collision(world: WorldState, robot_index: int) -> bool:
    return nearest_obstacle_distance(world, robot_index) < COLLISION_DISTANCE
