"""Simulated 2-D lidar and depth camera, plus observation assembly with 3-frame stacks."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .world import WorldState, normalize_angle

STACK_DEPTH = 3


@dataclass(frozen=True)
class LidarConfig:
    beams: int = 512
    fov_deg: float = 240.0
    max_range: float = 4.0
    min_range: float = 1e-3
    noise_std: float = 0.02

    def angles(self) -> np.ndarray:
        """Beam angles relative to heading; beam ``beams // 2`` points straight ahead."""
        fov = math.radians(self.fov_deg)
        return -0.5 * fov + np.arange(self.beams) * (fov / self.beams)


@dataclass(frozen=True)
class CameraConfig:
    width: int = 150
    height: int = 120
    hfov_deg: float = 60.0
    vfov_deg: float = 49.0
    mount_height: float = 0.6
    near: float = 1.4
    far: float = 5.0
    noise_std: float = 0.2

    def column_angles(self) -> np.ndarray:
        """Pinhole column bearings, leftmost column first (positive = left)."""
        fx = 0.5 * self.width / math.tan(math.radians(self.hfov_deg) / 2)
        u = 0.5 * self.width - (np.arange(self.width) + 0.5)
        return np.arctan(u / fx)

    def row_slopes(self) -> np.ndarray:
        """Tangent of each row's elevation angle, top row first."""
        fy = 0.5 * self.height / math.tan(math.radians(self.vfov_deg) / 2)
        return (0.5 * self.height - (np.arange(self.height) + 0.5)) / fy


PAPER_CAMERA = CameraConfig()
DESK_CAMERA = CameraConfig(width=48, height=36)
PRESETS = {"paper-scale": PAPER_CAMERA, "desk-scale": DESK_CAMERA}


@dataclass(frozen=True)
class SensorConfig:
    lidar: LidarConfig = field(default_factory=LidarConfig)
    camera: CameraConfig = field(default_factory=lambda: DESK_CAMERA)
    noise: bool = True

    @classmethod
    def preset(cls, name: str, noise: bool = True) -> "SensorConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown sensor preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(camera=PRESETS[name], noise=noise)


def cast_lidar(world: WorldState, robot_index: int, config: LidarConfig = LidarConfig(),
               rng: np.random.Generator | None = None) -> np.ndarray:
    """512-beam planar scan from the robot center.

    No-hit beams read exactly ``max_range``. With ``rng`` given, additive
    Gaussian noise is applied and the result re-clamped to (0, max_range].
    """
    robot = world.robots[robot_index]
    segs, discs = world.obstacle_arrays(exclude_robot=robot_index)
    angles = robot.heading + config.angles()
    ranges = kernels.ray_cast(robot.position[0], robot.position[1], angles, segs, discs)
    ranges = np.minimum(ranges, config.max_range)
    if rng is not None and config.noise_std > 0:
        ranges = ranges + rng.normal(0.0, config.noise_std, size=ranges.shape)
    return np.clip(ranges, config.min_range, config.max_range)


def render_depth(world: WorldState, robot_index: int, config: CameraConfig = DESK_CAMERA,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Depth image (rows x cols) from a column-raycast pinhole model.

    Each column casts one horizontal ray and collects every obstacle it
    crosses. A pixel takes the nearest hit whose vertical extent [0, height]
    contains the pixel ray's height at that distance; pixels that see nothing
    read ``far``. Values are clamped to [near, far], then noised and re-clamped.
    """
    robot = world.robots[robot_index]
    segs, discs = world.obstacle_arrays(exclude_robot=robot_index)
    depth = np.full((config.height, config.width), config.far)
    if segs.shape[0] + discs.shape[0]:
        angles = robot.heading + config.column_angles()
        hits = kernels.ray_hit_matrix(robot.position[0], robot.position[1], angles, segs, discs)
        heights = np.concatenate([segs[:, 4], discs[:, 3]])
        keep = np.isfinite(hits).any(axis=0)
        hits = hits[:, keep]
        heights = heights[keep]
        if hits.shape[1]:
            # z[row, col, obstacle] = height of the pixel ray where it meets that obstacle
            slopes = config.row_slopes()[:, None, None]
            finite = np.where(np.isfinite(hits), hits, 0.0)[None, :, :]
            z = config.mount_height + slopes * finite
            visible = np.isfinite(hits)[None, :, :] & (z >= 0.0) & (z <= heights[None, None, :])
            cand = np.where(visible, finite, np.inf).min(axis=2)
            depth = np.where(np.isfinite(cand), cand, config.far)
    depth = np.clip(depth, config.near, config.far)
    if rng is not None and config.noise_std > 0:
        depth = np.clip(depth + rng.normal(0.0, config.noise_std, size=depth.shape),
                        config.near, config.far)
    return depth


def goal_observation(world: WorldState, robot_index: int, target=None) -> np.ndarray:
    """(distance, bearing) of ``target`` (default: the robot's goal) in the robot frame."""
    robot = world.robots[robot_index]
    tx, ty = robot.goal if target is None else target
    dx = tx - robot.position[0]
    dy = ty - robot.position[1]
    return np.array([math.hypot(dx, dy), normalize_angle(math.atan2(dy, dx) - robot.heading)])


@dataclass
class Observation:
    lidar: np.ndarray  # (3, beams), oldest frame first
    image: np.ndarray | None  # (3, H, W) or None when the camera is off
    goal: np.ndarray  # (2,)
    velocity: np.ndarray  # (2,)


class FrameHistory:
    """Per-robot rolling stack of the last three lidar and depth frames.

    The first push fills all slots with the initial frame.
    """

    def __init__(self, depth: int = STACK_DEPTH):
        self.depth = depth
        self.lidar: deque = deque(maxlen=depth)
        self.image: deque = deque(maxlen=depth)

    def push(self, lidar: np.ndarray, image: np.ndarray | None) -> None:
        if not self.lidar:
            for _ in range(self.depth):
                self.lidar.append(lidar)
                self.image.append(image)
        else:
            self.lidar.append(lidar)
            self.image.append(image)

    @property
    def ready(self) -> bool:
        return len(self.lidar) == self.depth

    def lidar_stack(self) -> np.ndarray:
        return np.stack(self.lidar)

    def image_stack(self) -> np.ndarray | None:
        if self.image[0] is None:
            return None
        return np.stack(self.image)


def assemble_observation(history: FrameHistory, world: WorldState, robot_index: int,
                         lidar: np.ndarray, image: np.ndarray | None) -> Observation:
    """Push this step's frames and build the 4-part observation."""
    history.push(lidar, image)
    robot = world.robots[robot_index]
    return Observation(
        lidar=history.lidar_stack(),
        image=history.image_stack(),
        goal=goal_observation(world, robot_index),
        velocity=np.array(robot.velocity, dtype=np.float64),
    )


def dump_frame(path, frame: np.ndarray) -> None:
    """Write a frame as a whitespace-delimited text grid (1-D frames become one row)."""
    arr = np.atleast_2d(np.asarray(frame, dtype=np.float64))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, arr, fmt="%.9f")


def load_frame(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)
