"""Declarative scenario files, seeded world construction and Least Passage Space.

Scenario files are JSON documents tagged ``"schema": "crowdsteer-scenario/1"``.
Geometry is fixed; robot spawns/goals and pedestrian scripts may be fixed or
drawn from seeded regions. A file may declare its LPS (the widest free
passage's narrowest width along the route), which is re-measured at load.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
from scipy import ndimage

from . import kernels
from .sensors import LidarConfig, cast_lidar
from .world import (DEFAULT_DT, Disc, Geometry, PedestrianState, RobotState, Segment, WorldState,
                    normalize_angle)

SCHEMA = "crowdsteer-scenario/1"
LPS_TOLERANCE = 0.05
SPAWN_CLEARANCE = 0.5
MAX_SPAWN_TRIES = 200


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class LPSDeclaration:
    declared: float
    bound: float | None
    start: tuple[float, float]
    goal: tuple[float, float]


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    geometry: Geometry
    robots: tuple[dict, ...]
    pedestrians: tuple[dict, ...] = ()
    random_pedestrians: dict | None = None
    lps: LPSDeclaration | None = None
    max_steps: int = 1000
    dt: float = DEFAULT_DT
    occluded_pedestrians: bool = False
    description: str = ""
    raw: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass(frozen=True)
class EpisodeMeta:
    scenario: str
    seed: int
    max_steps: int


# ---------------------------------------------------------------- parsing

def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ScenarioError(f"{where}: missing field {key!r}")
    return doc[key]


def parse_spec(doc: dict[str, Any]) -> ScenarioSpec:
    if doc.get("schema") != SCHEMA:
        raise ScenarioError(f"unsupported scenario schema {doc.get('schema')!r}; expected {SCHEMA!r}")
    name = _require(doc, "name", "scenario")
    try:
        segs = [Segment(*map(float, w)) for w in doc.get("walls", [])]
        discs = [Disc(*map(float, d)) for d in doc.get("discs", [])]
    except TypeError as exc:
        raise ScenarioError(f"{name}: malformed geometry ({exc})") from exc
    robots = tuple(_require(doc, "robots", name))
    if not robots:
        raise ScenarioError(f"{name}: at least one robot required")
    for k, r in enumerate(robots):
        _require(r, "spawn", f"{name}.robots[{k}]")
        _require(r, "goal", f"{name}.robots[{k}]")
    lps = None
    if doc.get("lps"):
        d = doc["lps"]
        lps = LPSDeclaration(float(_require(d, "declared", f"{name}.lps")), d.get("bound"),
                             tuple(_require(d, "start", f"{name}.lps")), tuple(_require(d, "goal", f"{name}.lps")))
    return ScenarioSpec(
        name=name,
        geometry=Geometry(segs, discs),
        robots=robots,
        pedestrians=tuple(doc.get("pedestrians", [])),
        random_pedestrians=doc.get("random_pedestrians"),
        lps=lps,
        max_steps=int(doc.get("max_steps", 1000)),
        dt=float(doc.get("dt", DEFAULT_DT)),
        occluded_pedestrians=bool(doc.get("occluded_pedestrians", False)),
        description=doc.get("description", ""),
        raw=doc,
    )


def validate_spec(spec: ScenarioSpec) -> None:
    """Load-time self-checks: declared LPS matches measurement and respects its bound."""
    if spec.lps is None:
        return
    measured = measure_lps(spec.geometry, spec.lps.start, spec.lps.goal)
    if abs(measured - spec.lps.declared) > LPS_TOLERANCE:
        raise ScenarioError(f"{spec.name}: declared LPS {spec.lps.declared} but measured {measured:.3f}")
    if spec.lps.bound is not None and not measured < spec.lps.bound:
        raise ScenarioError(f"{spec.name}: measured LPS {measured:.3f} violates bound < {spec.lps.bound}")


def load_spec(path, validate: bool = True) -> ScenarioSpec:
    with open(path) as fh:
        spec = parse_spec(json.load(fh))
    if validate:
        validate_spec(spec)
    return spec


def available() -> list[str]:
    root = resources.files("crowdsteer") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


@lru_cache(maxsize=None)
def get(name: str, validate: bool = True) -> ScenarioSpec:
    """Shipped scenario by name, or a path to a scenario file."""
    if name.endswith(".json") or "/" in name:
        return load_spec(Path(name), validate)
    root = resources.files("crowdsteer") / "scenarios"
    path = root / f"{name}.json"
    if not path.is_file():
        raise ScenarioError(f"unknown scenario {name!r}; shipped: {', '.join(available())}")
    with path.open() as fh:
        spec = parse_spec(json.load(fh))
    if validate:
        validate_spec(spec)
    return spec


# ---------------------------------------------------------------- building

def _uniform(rng, lo_hi):
    if isinstance(lo_hi, (int, float)):
        return float(lo_hi)
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi))


def _is_free(geometry: Geometry, point, others=(), clearance=SPAWN_CLEARANCE) -> bool:
    d = kernels.points_min_distance(np.array([point]), geometry.segments, geometry.discs)[0]
    if d < clearance:
        return False
    return all(math.dist(point, o) >= 2 * clearance for o in others)


def _sample_point(rng, region, geometry, taken, what):
    for _ in range(MAX_SPAWN_TRIES):
        p = (_uniform(rng, region["x"]), _uniform(rng, region["y"]))
        if _is_free(geometry, p, taken):
            return p
    raise ScenarioError(f"could not find a collision-free {what} after {MAX_SPAWN_TRIES} tries")


def _resolve_position(rng, desc, geometry, taken, what, origin=None, bounds=None):
    if "x" in desc and "y" in desc and not isinstance(desc["x"], list):
        p = (float(desc["x"]), float(desc["y"]))
        if not _is_free(geometry, p, taken):
            raise ScenarioError(f"fixed {what} {p} is not collision-free")
        return p
    if "region" in desc:
        return _sample_point(rng, desc["region"], geometry, taken, what)
    if "relative" in desc:
        rel = desc["relative"]
        for _ in range(MAX_SPAWN_TRIES):
            dist = _uniform(rng, rel["distance"])
            bearing = _uniform(rng, rel.get("bearing", [-math.pi, math.pi]))
            p = (origin[0] + dist * math.cos(bearing), origin[1] + dist * math.sin(bearing))
            if bounds is not None and not (bounds["x"][0] <= p[0] <= bounds["x"][1]
                                           and bounds["y"][0] <= p[1] <= bounds["y"][1]):
                continue
            if _is_free(geometry, p, taken):
                return p
        raise ScenarioError(f"could not place {what} after {MAX_SPAWN_TRIES} tries")
    raise ScenarioError(f"cannot interpret {what} description {desc!r}")


def _build_robots(spec: ScenarioSpec, rng) -> list[RobotState]:
    robots = []
    taken: list[tuple[float, float]] = []
    for k, r in enumerate(spec.robots):
        spawn_desc = r["spawn"]
        pos = _resolve_position(rng, spawn_desc, spec.geometry, taken, f"robot {k} spawn")
        taken.append(pos)
        goal = _resolve_position(rng, r["goal"], spec.geometry, [], f"robot {k} goal",
                                 origin=pos, bounds=r["goal"].get("bounds"))
        heading = spawn_desc.get("heading", "toward_goal")
        if heading == "toward_goal":
            h = math.atan2(goal[1] - pos[1], goal[0] - pos[0])
        elif isinstance(heading, dict):
            base = math.atan2(goal[1] - pos[1], goal[0] - pos[0])
            h = base + _uniform(rng, heading["toward_goal_jitter"])
        else:
            h = _uniform(rng, heading)
        wps = tuple(tuple(map(float, w)) for w in r.get("waypoints", []))
        robots.append(RobotState(position=pos, heading=normalize_angle(h), goal=goal, waypoints=wps))
    return robots


def _build_pedestrians(spec: ScenarioSpec, rng, robots) -> list[PedestrianState]:
    peds = []
    robot_pos = [r.position for r in robots]
    groups: dict = {}
    for p in spec.pedestrians:
        # Pedestrians sharing a "group" share one draw (e.g. pairs walking together).
        key = p.get("group", object())
        if key not in groups:
            groups[key] = (_uniform(rng, [-1.0, 1.0]), _uniform(rng, [-1.0, 1.0]), rng.uniform())
        ux, uy, us = groups[key]
        x, y = map(float, p["position"])
        dx = ux * p.get("start_jitter", 0.0)
        # y_jitter shifts the whole lane: start and every waypoint.
        dy = uy * p.get("y_jitter", 0.0)
        speed = p.get("speed", 1.2)
        if isinstance(speed, list):
            speed = speed[0] + us * (speed[1] - speed[0])
        peds.append(PedestrianState(
            position=(x + dx, y + dy),
            speed=float(speed),
            waypoints=tuple((float(w[0]), float(w[1]) + dy) for w in p.get("waypoints", [])),
            radius=float(p.get("radius", 0.3)),
            height=float(p.get("height", 1.7)),
            loop=bool(p.get("loop", False)),
        ))
    rp = spec.random_pedestrians
    if rp:
        lo, hi = rp["count"] if isinstance(rp["count"], list) else (rp["count"], rp["count"])
        count = int(rng.integers(lo, hi + 1))
        region = rp["region"]
        for k in range(count):
            pos = _sample_point(rng, region, spec.geometry, robot_pos, f"pedestrian {k}")
            wps = [_sample_point(rng, region, spec.geometry, [], f"pedestrian {k} waypoint")
                   for _ in range(int(rp.get("waypoints", 3)))]
            peds.append(PedestrianState(position=pos, speed=_uniform(rng, rp.get("speed", [0.8, 1.4])),
                                        waypoints=tuple(wps), loop=bool(rp.get("loop", True))))
    return peds


def build(spec: ScenarioSpec, seed: int) -> tuple[WorldState, EpisodeMeta]:
    """Deterministic world for ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    robots = _build_robots(spec, rng)
    peds = _build_pedestrians(spec, rng, robots)
    world = WorldState(geometry=spec.geometry, robots=tuple(robots), pedestrians=tuple(peds), dt=spec.dt)
    return world, EpisodeMeta(spec.name, seed, spec.max_steps)


def pedestrians_hidden(world: WorldState, robot_index: int = 0, lidar: LidarConfig = LidarConfig()) -> bool:
    """True when no noise-free lidar beam from the robot reaches a pedestrian."""
    seen = cast_lidar(world, robot_index, lidar)
    without = WorldState(geometry=world.geometry, robots=world.robots, dt=world.dt)
    return bool(np.array_equal(seen, cast_lidar(without, robot_index, lidar)))


def source(spec: ScenarioSpec):
    """World factory for :class:`~crowdsteer.env.NavEnv` drawing seeds from the env RNG."""
    def make(rng: np.random.Generator) -> WorldState:
        return build(spec, int(rng.integers(2**31 - 1)))[0]
    return make


def mixture(parts: list[tuple[ScenarioSpec, float]]):
    """World factory that picks a scenario per episode with the given weights."""
    specs = [p[0] for p in parts]
    w = np.array([p[1] for p in parts], dtype=np.float64)
    w = w / w.sum()

    def make(rng: np.random.Generator) -> WorldState:
        k = int(rng.choice(len(specs), p=w))
        return build(specs[k], int(rng.integers(2**31 - 1)))[0]
    return make


# ---------------------------------------------------------------- least passage space

def clearance_grid(geometry: Geometry, points, resolution: float = 0.02, margin: float = 0.0):
    """Distance-to-obstacle field sampled on a grid covering the scene.

    Returns ``(field, x0, y0)`` with ``field[j, i]`` at ``(x0 + i*res, y0 + j*res)``.
    """
    xs = list(geometry.segments[:, 0]) + list(geometry.segments[:, 2])
    ys = list(geometry.segments[:, 1]) + list(geometry.segments[:, 3])
    for d in geometry.discs:
        xs += [d[0] - d[2], d[0] + d[2]]
        ys += [d[1] - d[2], d[1] + d[2]]
    for p in points:
        xs.append(p[0])
        ys.append(p[1])
    x0, x1 = min(xs) - margin, max(xs) + margin
    y0, y1 = min(ys) - margin, max(ys) + margin
    nx = int(math.floor((x1 - x0) / resolution)) + 1
    ny = int(math.floor((y1 - y0) / resolution)) + 1
    gx = x0 + resolution * np.arange(nx)
    gy = y0 + resolution * np.arange(ny)
    pts = np.stack(np.meshgrid(gx, gy), axis=-1).reshape(-1, 2)
    field = kernels.points_min_distance(pts, geometry.segments, geometry.discs).reshape(ny, nx)
    return field, x0, y0


def _cell(p, x0, y0, res, shape):
    i = int(round((p[0] - x0) / res))
    j = int(round((p[1] - y0) / res))
    if not (0 <= i < shape[1] and 0 <= j < shape[0]):
        raise ScenarioError(f"point {p} outside the measured area")
    return j, i


def _connected(mask, a, b) -> bool:
    if not (mask[a] and mask[b]):
        return False
    labels, _ = ndimage.label(mask)
    return labels[a] == labels[b]


def measure_lps(geometry: Geometry, start, goal, resolution: float = 0.02) -> float:
    """Least Passage Space between ``start`` and ``goal``.

    Largest obstacle-inflation radius ``r`` for which the grid cells with
    clearance >= r still connect start to goal (4-connectivity), times two.
    """
    field, x0, y0 = clearance_grid(geometry, [start, goal], resolution)
    a = _cell(start, x0, y0, resolution, field.shape)
    b = _cell(goal, x0, y0, resolution, field.shape)
    if not _connected(field > 0, a, b):
        raise ScenarioError("start and goal are not connected through free space")
    levels = np.unique(field[field > 0])
    levels = levels[levels <= min(field[a], field[b])]
    lo, hi = 0, len(levels) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _connected(field >= levels[mid], a, b):
            lo = mid
        else:
            hi = mid - 1
    return float(2.0 * levels[lo])
