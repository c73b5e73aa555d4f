"""Seeded evaluation episodes, traces and aggregate navigation metrics."""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import scenarios
from .dwa import DWAConfig, dwa_plan
from .env import COLLISION, GOAL, STALL, TIMEOUT, EnvConfig, NavEnv
from .policy import PolicyNet, distributions, sample_action
from .sensors import SensorConfig
from .world import WorldState, nearest_obstacle_distance

PLANNER_ERROR = "planner-error"
OUTCOMES = (GOAL, COLLISION, STALL, TIMEOUT, PLANNER_ERROR)
OSCILLATION_GATE = 0.1
STALL_WINDOW = 100
STALL_DISTANCE = 0.2
TRACE_COLUMNS = ("time", "x", "y", "theta", "v", "omega", "r_g", "r_c", "r_osc", "r_safedist", "min_distance")


# ---------------------------------------------------------------- planners

class PolicyPlanner:
    """Trained network; deterministic mean actions unless ``deterministic=False``."""

    name = "policy"

    def __init__(self, net: PolicyNet, deterministic: bool = True, seed: int = 0):
        self.net = net
        self.deterministic = deterministic
        self.rng = np.random.default_rng(seed)

    @property
    def uses_camera(self) -> bool:
        return self.net.config.uses_camera

    def act(self, env: NavEnv, observations) -> dict:
        keys = sorted(observations)
        out = self.net.forward_obs([observations[i] for i in keys])
        return {i: sample_action(d, self.rng, self.deterministic)[0]
                for i, d in zip(keys, distributions(out))}


class DWAPlanner:
    name = "dwa"
    uses_camera = False

    def __init__(self, config: DWAConfig = DWAConfig()):
        self.config = config

    def act(self, env: NavEnv, observations) -> dict:
        return {i: dwa_plan(env.world, i, self.config) for i in sorted(observations)}


class ScriptedPlanner:
    """Constant action for every robot."""

    name = "scripted"
    uses_camera = False

    def __init__(self, action):
        self.action = np.asarray(action, dtype=np.float64)

    def act(self, env: NavEnv, observations) -> dict:
        return {i: self.action.copy() for i in sorted(observations)}


# ---------------------------------------------------------------- results

@dataclass
class EpisodeResult:
    scenario: str
    seed: int
    robot: int
    planner: str
    outcome: str
    trace: np.ndarray  # rows of TRACE_COLUMNS; row 0 is the start pose
    dt: float
    diagnostic: str = ""
    length: float = field(init=False)
    duration: float = field(init=False)
    average_velocity: float = field(init=False)
    oscillations: int = field(init=False)

    def __post_init__(self):
        self.length, self.duration, self.average_velocity = trace_metrics(self.trace, self.dt, self.outcome)
        self.oscillations = count_oscillations(self.trace[1:, 5]) if len(self.trace) > 1 else 0

    @property
    def success(self) -> bool:
        return self.outcome == GOAL


def _until_failure(trace: np.ndarray, outcome: str) -> np.ndarray:
    # A stalled run is measured up to the point where the stall window began.
    if outcome == STALL and len(trace) > STALL_WINDOW:
        return trace[:len(trace) - STALL_WINDOW]
    return trace


def trace_metrics(trace: np.ndarray, dt: float, outcome: str = GOAL) -> tuple[float, float, float]:
    """``(length, duration, average_velocity)`` from a pose trace."""
    t = _until_failure(np.asarray(trace, dtype=np.float64), outcome)
    if len(t) < 2:
        return 0.0, 0.0, 0.0
    length = float(np.sum(np.hypot(np.diff(t[:, 1]), np.diff(t[:, 2]))))
    duration = (len(t) - 1) * dt
    return length, duration, length / duration


def count_oscillations(omegas, gate: float = OSCILLATION_GATE) -> int:
    """Sign changes of omega where both neighbouring values exceed ``gate`` in magnitude."""
    w = np.asarray(omegas, dtype=np.float64)
    if len(w) < 2:
        return 0
    a, b = w[:-1], w[1:]
    return int(np.sum((np.abs(a) > gate) & (np.abs(b) > gate) & (np.sign(a) != np.sign(b))))


# ---------------------------------------------------------------- episodes

def eval_env_config(spec_or_steps, use_camera: bool, sensors: SensorConfig = SensorConfig()) -> EnvConfig:
    max_steps = spec_or_steps if isinstance(spec_or_steps, int) else spec_or_steps.max_steps
    return EnvConfig(sensors=sensors, max_steps=max_steps, use_camera=use_camera,
                     stall_window=STALL_WINDOW, stall_distance=STALL_DISTANCE)


def run_episode(world: WorldState, planner, limits: EnvConfig, seed: int, scenario: str = "") -> list[EpisodeResult]:
    """Step ``world`` with ``planner`` until every robot finishes.

    Returns one :class:`EpisodeResult` per robot; sensor noise is seeded by ``seed``.
    """
    limits = replace(limits, use_camera=getattr(planner, "uses_camera", limits.use_camera))
    env = NavEnv(lambda rng: world, limits, seed=seed)
    obs = env.reset(world)
    n = len(world.robots)
    rows = {i: [_row(0.0, world.robots[i], world.robots[i].velocity, None, nearest_obstacle_distance(world, i))] for i in range(n)}
    diagnostics: dict[int, str] = {}
    errors: dict[int, str] = {}
    while not env.done:
        actions = planner.act(env, obs)
        for i in list(actions):
            a = np.asarray(actions[i], dtype=np.float64)
            if a.shape != (2,) or not np.all(np.isfinite(a)):
                errors[i] = f"non-finite or malformed action {a!r} at step {env.steps}"
        if errors:
            for i in errors:
                env.outcomes[i] = PLANNER_ERROR
                diagnostics[i] = errors[i]
            env.active = [i for i in env.active if i not in errors]
            errors = {}
            if env.done:
                break
            actions = {i: a for i, a in actions.items() if i in env.active}
        res = env.step(actions)
        t = env.steps * world.dt
        for i, info in res.infos.items():
            r = env.world.robots[i]
            rows[i].append(_row(t, r, r.velocity, info.breakdown, info.center_distance))
        obs = res.observations
    return [EpisodeResult(scenario, seed, i, getattr(planner, "name", type(planner).__name__),
                          env.outcomes[i], np.array(rows[i]), world.dt, diagnostics.get(i, ""))
            for i in range(n)]


def _row(t, robot, action, breakdown, center):
    terms = (0.0, 0.0, 0.0, 0.0) if breakdown is None else (
        breakdown.r_g, breakdown.r_c, breakdown.r_osc, breakdown.r_safedist)
    return (t, robot.position[0], robot.position[1], robot.heading, float(action[0]), float(action[1]),
            *terms, center)


def run_scenario(name: str, planner, seeds, sensors: SensorConfig = SensorConfig()) -> list[EpisodeResult]:
    spec = scenarios.get(name)
    out = []
    for seed in seeds:
        world, _ = scenarios.build(spec, seed)
        limits = eval_env_config(spec, getattr(planner, "uses_camera", False), sensors)
        out.extend(run_episode(world, planner, limits, seed, spec.name))
    return out


def _battery_job(args):
    name, planner_factory, seed, sensors = args
    return run_scenario(name, planner_factory(), [seed], sensors)


def run_battery(names, planner_factory, seeds, workers: int = 1,
                sensors: SensorConfig = SensorConfig()) -> list[EpisodeResult]:
    """All (scenario, seed) episodes; results are ordered by (scenario, seed) regardless of workers.

    ``planner_factory`` builds a fresh planner per episode and must be
    picklable when ``workers > 1``.
    """
    jobs = [(n, planner_factory, s, sensors) for n in names for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_battery_job, jobs))
    else:
        parts = [_battery_job(j) for j in jobs]
    return [r for p in parts for r in p]


# ---------------------------------------------------------------- traces

def write_trace(path, result: EpisodeResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# scenario={result.scenario} seed={result.seed} robot={result.robot} "
                 f"planner={result.planner} outcome={result.outcome} dt={result.dt!r}\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in result.trace:
            w.writerow([repr(float(v)) for v in row])


def read_trace(path) -> EpisodeResult:
    with open(path, newline="") as fh:
        header = fh.readline()
        if not header.startswith("# "):
            raise ValueError(f"{path}: missing trace header")
        meta = dict(kv.split("=", 1) for kv in header[2:].split())
        reader = csv.reader(fh)
        cols = next(reader)
        if tuple(cols) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {cols}")
        rows = [[float(v) for v in r] for r in reader]
    return EpisodeResult(meta["scenario"], int(meta["seed"]), int(meta["robot"]), meta["planner"],
                         meta["outcome"], np.array(rows), float(meta["dt"]))


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class MetricRow:
    scenario: str
    planner: str
    attempts: int
    success_rate: float
    avg_length: float
    mean_time: float
    avg_velocity: float
    mean_oscillations: float
    collisions: int
    stalls: int
    timeouts: int


METRIC_COLUMNS = tuple(MetricRow.__dataclass_fields__)


@dataclass
class MetricTable:
    rows: list[MetricRow]

    def row(self, scenario: str, planner: str) -> MetricRow:
        for r in self.rows:
            if r.scenario == scenario and r.planner == planner:
                return r
        raise KeyError((scenario, planner))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRIC_COLUMNS)
            for r in self.rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, c) for c in METRIC_COLUMNS)])

    @classmethod
    def read_csv(cls, path) -> "MetricTable":
        rows = []
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                rows.append(MetricRow(
                    r["scenario"], r["planner"], int(r["attempts"]), float(r["success_rate"]),
                    float(r["avg_length"]), float(r["mean_time"]), float(r["avg_velocity"]),
                    float(r["mean_oscillations"]), int(r["collisions"]), int(r["stalls"]), int(r["timeouts"])))
        return cls(rows)

    def format(self) -> str:
        head = f"{'scenario':<18}{'planner':<10}{'n':>4}{'success':>9}{'length':>9}{'time':>9}{'vel':>7}{'osc':>7}"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r.scenario:<18}{r.planner:<10}{r.attempts:>4}{r.success_rate:>9.2f}{r.avg_length:>9.2f}"
                         f"{r.mean_time:>9.2f}{r.avg_velocity:>7.2f}{r.mean_oscillations:>7.1f}")
        return "\n".join(lines)


def compute_metrics(results) -> MetricTable:
    """Aggregate per (scenario, planner), in first-seen order.

    Length, time and velocity average over successful attempts; a cell with
    no success averages the until-failure measurements instead.
    """
    cells: dict[tuple[str, str], list[EpisodeResult]] = {}
    for r in results:
        cells.setdefault((r.scenario, r.planner), []).append(r)
    rows = []
    for (scenario, planner), rs in cells.items():
        ok = [r for r in rs if r.success]
        basis = ok if ok else rs
        rows.append(MetricRow(
            scenario=scenario,
            planner=planner,
            attempts=len(rs),
            success_rate=len(ok) / len(rs),
            avg_length=float(np.mean([r.length for r in basis])),
            mean_time=float(np.mean([r.duration for r in basis])),
            avg_velocity=float(np.mean([r.average_velocity for r in basis])),
            mean_oscillations=float(np.mean([r.oscillations for r in rs])),
            collisions=sum(r.outcome == COLLISION for r in rs),
            stalls=sum(r.outcome == STALL for r in rs),
            timeouts=sum(r.outcome == TIMEOUT for r in rs),
        ))
    return MetricTable(rows)
