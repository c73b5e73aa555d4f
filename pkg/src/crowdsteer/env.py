"""Multi-robot navigation episode: world stepping, sensing, reward and termination."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .reward import DEFAULT_REWARD, RewardBreakdown, RewardConfig, total_reward
from .sensors import FrameHistory, Observation, SensorConfig, assemble_observation, cast_lidar, render_depth
from .world import WorldState, nearest_obstacle_distance, step_world

GOAL = "goal"
COLLISION = "collision"
TIMEOUT = "timeout"
STALL = "oscillation-stall"


@dataclass(frozen=True)
class EnvConfig:
    sensors: SensorConfig = field(default_factory=SensorConfig)
    reward: RewardConfig = DEFAULT_REWARD
    max_steps: int = 1000
    use_camera: bool = True
    # Stall detection (evaluation): net displacement below stall_distance over stall_window steps.
    stall_window: int | None = None
    stall_distance: float = 0.2


@dataclass
class StepInfo:
    breakdown: RewardBreakdown
    outcome: str | None
    center_distance: float
    clearance: float


@dataclass
class StepResult:
    observations: dict[int, Observation]
    rewards: dict[int, float]
    dones: dict[int, bool]
    infos: dict[int, StepInfo]


WorldSource = Callable[[np.random.Generator], WorldState]


class NavEnv:
    """Steps every robot in a world together; each robot is an independent agent.

    Robots that finish (goal or collision) are parked in place and keep acting
    as obstacles for the others until the episode ends.
    """

    def __init__(self, source: WorldSource, config: EnvConfig = EnvConfig(), seed: int = 0):
        self.source = source
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.world: WorldState | None = None
        self.active: list[int] = []
        self.histories: dict[int, FrameHistory] = {}
        self.outcomes: dict[int, str] = {}
        self.positions: dict[int, list] = {}
        self.steps = 0

    # -- sensing ---------------------------------------------------------------
    def _noise_rng(self):
        return self.rng if self.config.sensors.noise else None

    def observe(self, i: int) -> Observation:
        sensors = self.config.sensors
        rng = self._noise_rng()
        lidar = cast_lidar(self.world, i, sensors.lidar, rng)
        image = render_depth(self.world, i, sensors.camera, rng) if self.config.use_camera else None
        return assemble_observation(self.histories[i], self.world, i, lidar, image)

    # -- episode ---------------------------------------------------------------
    def reset(self, world: WorldState | None = None) -> dict[int, Observation]:
        self.world = world if world is not None else self.source(self.rng)
        n = len(self.world.robots)
        self.active = list(range(n))
        self.histories = {i: FrameHistory() for i in range(n)}
        self.outcomes = {}
        self.positions = {i: [self.world.robots[i].position] for i in range(n)}
        self.steps = 0
        return {i: self.observe(i) for i in self.active}

    @property
    def done(self) -> bool:
        return not self.active

    def step(self, actions: dict[int, np.ndarray]) -> StepResult:
        if self.world is None or not self.active:
            raise RuntimeError("step() called on a finished or unreset episode")
        prev = self.world
        cmd = [actions.get(i) if i in self.active else None for i in range(len(prev.robots))]
        world = step_world(prev, cmd)
        robots = list(world.robots)
        self.steps += 1
        rewards, dones, infos = {}, {}, {}
        finished = []
        cfg = self.config
        for i in self.active:
            r = robots[i]
            center = nearest_obstacle_distance(world, i)
            clearance = center - r.radius
            breakdown, remaining = total_reward(prev.robots[i].position, r.position, r.goal, r.waypoints,
                                                center, r.velocity[1], clearance, cfg.reward)
            if remaining != r.waypoints:
                robots[i] = replace(r, waypoints=remaining)
            outcome = None
            if center < cfg.reward.collision_threshold:
                outcome = COLLISION
            elif np.hypot(r.position[0] - r.goal[0], r.position[1] - r.goal[1]) < cfg.reward.goal_threshold:
                outcome = GOAL
            else:
                self.positions[i].append(r.position)
                w = cfg.stall_window
                if w and len(self.positions[i]) > w:
                    start = self.positions[i][-w - 1]
                    if np.hypot(r.position[0] - start[0], r.position[1] - start[1]) < cfg.stall_distance:
                        outcome = STALL
                if outcome is None and self.steps >= cfg.max_steps:
                    outcome = TIMEOUT
            rewards[i] = breakdown.total
            dones[i] = outcome is not None
            infos[i] = StepInfo(breakdown, outcome, center, clearance)
            if outcome is not None:
                self.outcomes[i] = outcome
                finished.append(i)
        self.world = world.with_robots(robots)
        self.active = [i for i in self.active if i not in finished]
        obs = {i: self.observe(i) for i in self.active}
        return StepResult(obs, rewards, dones, infos)
