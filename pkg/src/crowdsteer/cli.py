"""``crowdsteer`` command line: train, evaluate, rollout, compare, export-traces, grad-check.

Exit codes: 0 success, 1 check failed (grad-check above tolerance), 2 usage
or configuration error, 3 missing or unreadable checkpoint, 4 training halted.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import config as runcfg
from . import scenarios
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .dwa import DWAConfig
from .env import EnvConfig
from .evaluation import (DWAPlanner, PolicyPlanner, compute_metrics, eval_env_config, run_battery, run_episode,
                         write_trace)
from .policy import NetConfig, PolicyNet
from .ppo import Trainer, grad_check_policy, train_curriculum
from .sensors import SensorConfig

log = logging.getLogger("crowdsteer")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_HALTED = 0, 1, 2, 3, 4
GRAD_TOLERANCE = 1e-4


class CheckpointPathError(CheckpointError):
    pass


def resolve_checkpoint(name: str, search=("runs", "runs/train")) -> Path:
    """A path to an existing file, or a bare name like ``final`` looked up as ``<dir>/<name>.ckpt``."""
    p = Path(name)
    if p.is_file():
        return p
    tried = [p]
    if p.suffix == "" and len(p.parts) == 1:
        for d in search:
            cand = Path(d) / f"{name}.ckpt"
            tried.append(cand)
            if cand.is_file():
                return cand
    raise CheckpointPathError("checkpoint not found; tried: " + ", ".join(str(t) for t in tried))


class PolicyFactory:
    """Picklable planner factory: every call loads a fresh network from the checkpoint file."""

    def __init__(self, path):
        self.path = str(path)

    def __call__(self):
        return PolicyPlanner(load_checkpoint(self.path).policy())


class DWAFactory:
    def __call__(self):
        return DWAPlanner(DWAConfig())


def _sensors(cfg: RunConfig) -> SensorConfig:
    return SensorConfig.preset(cfg.preset, noise=cfg.noise)


def _planner_factory(cfg: RunConfig, search):
    if cfg.planner == "dwa":
        return DWAFactory()
    if cfg.checkpoint is None:
        raise ConfigError("config field 'checkpoint': required for planner 'policy'")
    return PolicyFactory(resolve_checkpoint(cfg.checkpoint, search))


def _seeds(cfg: RunConfig) -> list[int]:
    return [cfg.seed + k for k in range(cfg.attempts)]


def _require_scenario(cfg: RunConfig) -> str:
    if cfg.scenario is None:
        raise ConfigError("config field 'scenario': required for this command")
    scenarios.get(cfg.scenario)
    return cfg.scenario


# ---------------------------------------------------------------- commands

def cmd_train(cfg: RunConfig, args) -> int:
    out = Path(cfg.output)
    cfg.write(out)
    net_cfg = NetConfig(modality=cfg.modality, preset=cfg.preset)
    env_cfg = EnvConfig(sensors=_sensors(cfg), reward=cfg.reward, use_camera=net_cfg.uses_camera)
    if args.resume:
        ckpt = load_checkpoint(resolve_checkpoint(args.resume, (str(out),)))
        if cfg.scenario is None:
            raise ConfigError("config field 'scenario': resume continues a single-scenario run")
        spec = scenarios.get(cfg.scenario)
        net = ckpt.policy(net_cfg)
        trainer = Trainer(net, scenarios.source(spec), replace(env_cfg, max_steps=spec.max_steps), cfg.ppo,
                          seed=int(ckpt.counters.get("seed", cfg.seed)), stage=cfg.scenario)
        trainer.restore(ckpt)
        remaining = max(cfg.iterations - trainer.iteration, 0)
        trainer.train(remaining, callback=lambda t, row: log.info(_row_text(row)))
        save_checkpoint(out / "final.ckpt", trainer.checkpoint())
        trainer.log.write_csv(out / "training_log.csv")
        print(f"resumed to iteration {trainer.iteration}; checkpoint {out / 'final.ckpt'}")
        return EXIT_OK
    net = PolicyNet(net_cfg, seed=cfg.seed)
    if cfg.scenario is not None and cfg.schedule is None:
        # A single scenario trains with one resumable Trainer.
        spec = scenarios.get(cfg.scenario)
        trainer = Trainer(net, scenarios.source(spec), replace(env_cfg, max_steps=spec.max_steps), cfg.ppo,
                          seed=cfg.seed, stage=cfg.scenario)
        save_checkpoint(out / "initial.ckpt", trainer.checkpoint())
        trainer.train(cfg.iterations, callback=lambda t, row: log.info(_row_text(row)))
        save_checkpoint(out / "final.ckpt", trainer.checkpoint())
        trainer.log.write_csv(out / "training_log.csv")
        print(f"trained {trainer.iteration} iterations; checkpoint {out / 'final.ckpt'}")
        return EXIT_OK
    save_checkpoint(out / "initial.ckpt", _initial(net))
    result = train_curriculum(net, cfg.stages(), cfg.ppo, env_cfg, seed=cfg.seed, patience=cfg.patience,
                              out_dir=out, callback=lambda t, row: log.info(_row_text(row)))
    print(f"curriculum: {len(result.checkpoints)} stage(s), {len(result.log)} iterations; "
          f"checkpoint {out / 'final.ckpt'}")
    if result.halted:
        print(f"halted: {result.halted}", file=sys.stderr)
        return EXIT_HALTED
    return EXIT_OK


def _initial(net):
    return Checkpoint.from_policy(net, counters={"iteration": 0, "stage": "initial"})


def _row_text(row) -> str:
    return (f"[{row['stage']}] it {row['iteration']}: reward {row['mean_reward']:.3f} "
            f"success {row['success_rate']:.2f} kl {row['mean_kl']:.4g} beta {row['beta']:.3g}")


def cmd_evaluate(cfg: RunConfig, args) -> int:
    name = _require_scenario(cfg)
    out = Path(cfg.output)
    cfg.write(out)
    factory = _planner_factory(cfg, args.search)
    results = run_battery([name], factory, _seeds(cfg), cfg.workers, _sensors(cfg))
    table = compute_metrics(results)
    table.write_csv(out / "metrics.csv")
    print(table.format())
    return EXIT_OK


def cmd_rollout(cfg: RunConfig, args) -> int:
    name = _require_scenario(cfg)
    out = Path(cfg.output)
    cfg.write(out)
    if args.checkpoint_given:
        cfg = replace(cfg, planner="policy")
    planner = _planner_factory(cfg, args.search)()
    spec = scenarios.get(name)
    world, _ = scenarios.build(spec, cfg.seed)
    results = run_episode(world, planner, eval_env_config(spec, getattr(planner, "uses_camera", False),
                                                          _sensors(cfg)), cfg.seed, name)
    for r in results:
        path = out / f"{name}_seed{cfg.seed}_robot{r.robot}.csv"
        write_trace(path, r)
        print(f"robot {r.robot}: {r.outcome}, length {r.length:.2f} m, {r.duration:.1f} s -> {path}")
    return EXIT_OK


def cmd_export_traces(cfg: RunConfig, args) -> int:
    name = _require_scenario(cfg)
    out = Path(cfg.output)
    cfg.write(out)
    results = run_battery([name], _planner_factory(cfg, args.search), _seeds(cfg), cfg.workers, _sensors(cfg))
    for r in results:
        write_trace(out / f"{r.scenario}_seed{r.seed}_robot{r.robot}.csv", r)
    print(f"wrote {len(results)} trace files to {out}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    names = args.scenarios or ([cfg.scenario] if cfg.scenario else ["narrow-static", "narrow-ped", "occluded-ped",
                                                                     "dense-ped"])
    planners = args.planners.split(",")
    out = Path(cfg.output)
    cfg.write(out)
    results = []
    for p in planners:
        factory = _planner_factory(runcfg.validate(replace(cfg, planner=p)), args.search)
        results += run_battery(names, factory, _seeds(cfg), cfg.workers, _sensors(cfg))
    table = compute_metrics(results)
    table.write_csv(out / "compare.csv")
    # one row per scenario, success / length / time / velocity per planner
    head = f"{'scenario':<18}" + "".join(f"{p + ' succ':>12}{'len':>8}{'time':>8}{'vel':>7}" for p in planners)
    print(head)
    for n in names:
        cells = []
        for p in planners:
            r = table.row(n, p)
            cells.append(f"{r.success_rate:>12.2f}{r.avg_length:>8.2f}{r.mean_time:>8.2f}{r.avg_velocity:>7.2f}")
        print(f"{n:<18}" + "".join(cells))
    return EXIT_OK


def cmd_grad_check(cfg: RunConfig, args) -> int:
    net_cfg = NetConfig(modality=cfg.modality, preset=cfg.preset)
    worst, report, skipped = grad_check_policy(net_cfg, seed=cfg.seed, entries=args.entries)
    if args.verbose:
        for k, v in report.items():
            print(f"  {k:<16} {v:.3e}")
    print(f"max relative error: {worst:.3e} ({len(report)} tensors, {skipped} kink probes skipped)")
    if worst < GRAD_TOLERANCE:
        return EXIT_OK
    print(f"gradient check failed: {worst:.3e} >= {GRAD_TOLERANCE:g}", file=sys.stderr)
    return EXIT_CHECK


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "rollout": cmd_rollout, "compare": cmd_compare,
            "export-traces": cmd_export_traces, "grad-check": cmd_grad_check}


# ---------------------------------------------------------------- parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help=f"overrides ${runcfg.SEED_ENV} and the config file")
    common.add_argument("--out", dest="output", help="output directory")
    common.add_argument("--preset", choices=runcfg.PRESETS)
    common.add_argument("--modality", choices=runcfg.MODALITIES)
    common.add_argument("--workers", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="crowdsteer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a policy (single scenario or curriculum)")
    p.add_argument("--scenario")
    p.add_argument("--iterations", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--resume", help="checkpoint to continue from (single-scenario runs)")

    for name, helptext in (("evaluate", "metric table for one scenario"),
                           ("export-traces", "per-step trace files for a battery")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--scenario")
        p.add_argument("--planner", choices=runcfg.PLANNERS)
        p.add_argument("--checkpoint")
        p.add_argument("--n", dest="attempts", type=int)

    p = sub.add_parser("rollout", parents=[common], help="one traced episode, a trace file per robot")
    p.add_argument("--scenario")
    p.add_argument("--planner", choices=runcfg.PLANNERS)
    p.add_argument("--checkpoint")

    p = sub.add_parser("compare", parents=[common], help="side-by-side planner table")
    p.add_argument("--scenarios", nargs="+")
    p.add_argument("--planners", default="dwa,policy")
    p.add_argument("--checkpoint")
    p.add_argument("--n", dest="attempts", type=int)

    p = sub.add_parser("grad-check", parents=[common], help="reverse-mode vs finite-difference gradients")
    p.add_argument("--entries", type=int, default=6, help="probed entries per parameter tensor")
    return parser


_FLAG_FIELDS = ("seed", "output", "preset", "modality", "workers", "scenario", "iterations", "patience",
                "planner", "checkpoint", "attempts")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        file_cfg = runcfg.load(args.config) if args.config else None
        overrides = {k: getattr(args, k, None) for k in _FLAG_FIELDS}
        if overrides["output"] is None and (file_cfg is None or file_cfg.output == RunConfig.output):
            overrides["output"] = str(Path(RunConfig.output) / args.command)
        cfg = runcfg.resolve(file_cfg, overrides)
        args.checkpoint_given = getattr(args, "checkpoint", None) is not None
        if args.checkpoint_given and getattr(args, "planner", None) is None:
            cfg = replace(cfg, planner="policy")
        args.search = (cfg.output, str(Path(RunConfig.output) / "train"), RunConfig.output)
        args.resume = getattr(args, "resume", None)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except scenarios.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
