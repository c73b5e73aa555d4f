"""Run configuration: defaults, JSON config files, flags and the seed override."""
from __future__ import annotations

import json
import os
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path

from .ppo import PPOConfig, Stage, default_schedule
from .reward import RewardConfig

SCHEMA = "crowdsteer-run/1"
SEED_ENV = "CROWDSTEER_SEED"
PLANNERS = ("dwa", "policy")
PRESETS = ("desk-scale", "paper-scale")
MODALITIES = ("fusion", "lidar-only", "depth-only")


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending field."""


@dataclass(frozen=True)
class RunConfig:
    scenario: str | None = None
    planner: str = "dwa"
    checkpoint: str | None = None
    preset: str = "desk-scale"
    modality: str = "fusion"
    seed: int = 0
    output: str = "runs"
    attempts: int = 10
    workers: int = 1
    iterations: int = 200
    patience: int | None = None
    mix_ratio: float = 0.5
    noise: bool = True
    ppo: PPOConfig = field(default_factory=PPOConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    schedule: tuple[Stage, ...] | None = None

    def stages(self) -> tuple[Stage, ...]:
        if self.schedule is not None:
            return self.schedule
        if self.scenario is not None:
            return (Stage(self.scenario, self.scenario, self.iterations),)
        return default_schedule(self.iterations, self.mix_ratio)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = None if self.schedule is None else [asdict(s) for s in self.schedule]
        return {"schema": SCHEMA, **d}

    def write(self, directory) -> Path:
        path = Path(directory) / "run_config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


_SCALARS = {f.name: f for f in fields(RunConfig) if f.name not in ("ppo", "reward", "schedule")}
_TYPES = {"scenario": (str, type(None)), "planner": str, "checkpoint": (str, type(None)), "preset": str,
          "modality": str, "seed": int, "output": str, "attempts": int, "workers": int, "iterations": int,
          "patience": (int, type(None)), "mix_ratio": (int, float), "noise": bool}


def _check_type(where: str, value, kind):
    ok = isinstance(value, kind) and not (isinstance(value, bool) and kind in (int, (int, float)))
    if not ok:
        names = [k.__name__ for k in (kind if isinstance(kind, tuple) else (kind,)) if k is not type(None)]
        expected = "number" if names == ["int", "float"] else " or ".join(names)
        if isinstance(kind, tuple) and type(None) in kind:
            expected += " or null"
        raise ConfigError(f"config field '{where}': expected {expected}, "
                          f"got {type(value).__name__} {value!r}")


def _sub(cls, where: str, doc):
    if not isinstance(doc, dict):
        raise ConfigError(f"config field '{where}': expected an object")
    names = {f.name: f for f in fields(cls)}
    for k, v in doc.items():
        if k not in names:
            raise ConfigError(f"config field '{where}.{k}': unknown field")
        default = names[k].default
        if default is MISSING or default is None:
            continue
        if not isinstance(default, bool) and isinstance(default, (int, float)):
            _check_type(f"{where}.{k}", v, (int, float) if isinstance(default, float) else int)
        elif isinstance(default, bool):
            _check_type(f"{where}.{k}", v, bool)
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field '{where}': {exc}") from None


def _stage(k: int, doc) -> Stage:
    where = f"schedule[{k}]"
    if not isinstance(doc, dict):
        raise ConfigError(f"config field '{where}': expected an object")
    for key in ("name", "scenario", "iterations"):
        if key not in doc:
            raise ConfigError(f"config field '{where}.{key}': required")
    _check_type(f"{where}.name", doc["name"], str)
    _check_type(f"{where}.scenario", doc["scenario"], str)
    _check_type(f"{where}.iterations", doc["iterations"], int)
    return _sub(Stage, where, doc)


def from_dict(doc: dict, base: RunConfig = RunConfig()) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    schema = doc.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError(f"config field 'schema': expected {SCHEMA!r}, got {schema!r}")
    updates = {}
    for k, v in doc.items():
        if k == "schema":
            continue
        if k == "ppo":
            updates[k] = _sub(PPOConfig, "ppo", {**asdict(base.ppo), **v} if isinstance(v, dict) else v)
        elif k == "reward":
            updates[k] = _sub(RewardConfig, "reward", {**asdict(base.reward), **v} if isinstance(v, dict) else v)
        elif k == "schedule":
            if v is not None and not isinstance(v, list):
                raise ConfigError("config field 'schedule': expected a list of stages")
            updates[k] = None if v is None else tuple(_stage(i, s) for i, s in enumerate(v))
        elif k in _SCALARS:
            _check_type(k, v, _TYPES[k])
            updates[k] = v
        else:
            raise ConfigError(f"config field '{k}': unknown field")
    return validate(replace(base, **updates))


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.planner not in PLANNERS:
        raise ConfigError(f"config field 'planner': must be one of {PLANNERS}, got {cfg.planner!r}")
    if cfg.preset not in PRESETS:
        raise ConfigError(f"config field 'preset': must be one of {PRESETS}, got {cfg.preset!r}")
    if cfg.modality not in MODALITIES:
        raise ConfigError(f"config field 'modality': must be one of {MODALITIES}, got {cfg.modality!r}")
    for name in ("attempts", "workers"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"config field '{name}': must be >= 1")
    if cfg.iterations < 0:
        raise ConfigError("config field 'iterations': must be >= 0")
    if cfg.patience is not None and cfg.patience < 1:
        raise ConfigError("config field 'patience': must be >= 1")
    if not 0.0 <= cfg.mix_ratio < 1.0:
        raise ConfigError("config field 'mix_ratio': must be in [0, 1)")
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
    return from_dict(doc)


def resolve(file_cfg: RunConfig | None, overrides: dict, environ=os.environ) -> RunConfig:
    """Defaults < config file < ``CROWDSTEER_SEED`` < explicit flags."""
    cfg = file_cfg or RunConfig()
    env_seed = environ.get(SEED_ENV)
    if env_seed is not None and env_seed != "":
        try:
            cfg = replace(cfg, seed=int(env_seed))
        except ValueError:
            raise ConfigError(f"environment {SEED_ENV}: not an integer: {env_seed!r}") from None
    flags = {k: v for k, v in overrides.items() if v is not None}
    return validate(replace(cfg, **flags))
