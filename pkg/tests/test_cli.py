import json

import numpy as np
import pytest

from crowdsteer import cli
from crowdsteer.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from crowdsteer.config import SEED_ENV, ConfigError, RunConfig, from_dict, resolve
from crowdsteer.policy import NetConfig, PolicyNet
from crowdsteer.ppo import TrainingLog

SMALL_PPO = {"t_max": 48, "workers": 2, "minibatch": 48, "epochs": 1, "kl_target": 0.01}


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(SEED_ENV, raising=False)
    return tmp_path


def write_config(path, **doc):
    path.write_text(json.dumps({"schema": "crowdsteer-run/1", **doc}))
    return str(path)


def saved_config(directory):
    return json.loads((directory / "run_config.json").read_text())


def test_evaluate_dwa_example(workdir, capsys):
    rc = cli.main(["evaluate", "--scenario", "narrow-static", "--planner", "dwa", "--n", "10", "--seed", "7"])
    assert rc == 0
    row = capsys.readouterr().out.splitlines()[1].split()
    assert row[:4] == ["narrow-static", "dwa", "10", "1.00"]
    assert (workdir / "runs/evaluate/metrics.csv").is_file()
    assert saved_config(workdir / "runs/evaluate")["seed"] == 7


def test_grad_check_example(capsys):
    assert cli.main(["grad-check", "--preset", "desk-scale"]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.startswith("max relative error:") and float(line.split()[3]) < 1e-4


def test_rollout_circle_writes_four_traces(workdir):
    save_checkpoint(workdir / "runs/train/final.ckpt",
                    Checkpoint.from_policy(PolicyNet(NetConfig(modality="lidar-only"), seed=0)))
    assert cli.main(["rollout", "--scenario", "circle", "--checkpoint", "final"]) == 0
    traces = sorted(p.name for p in (workdir / "runs/rollout").glob("*.csv"))
    assert traces == [f"circle_seed0_robot{i}.csv" for i in range(4)]


def test_missing_checkpoint(capsys):
    assert cli.main(["evaluate", "--scenario", "didactic", "--checkpoint", "nowhere"]) == 3
    err = capsys.readouterr().err
    assert "nowhere" in err and "runs/train/nowhere.ckpt" in err


def test_policy_planner_needs_checkpoint(capsys):
    assert cli.main(["evaluate", "--scenario", "didactic", "--planner", "policy"]) == 2
    assert "'checkpoint'" in capsys.readouterr().err


@pytest.mark.parametrize("doc,field", [({"ppo": {"gamma": "x"}}, "ppo.gamma"), ({"seed": 1.5}, "seed"),
                                       ({"colour": 1}, "colour"), ({"planner": "astar"}, "planner"),
                                       ({"schedule": [{"name": "a", "scenario": "didactic"}]}, "schedule[0].iterations"),
                                       ({"reward": {"r_goal": True}}, "reward.r_goal")])
def test_config_errors_name_the_field(workdir, capsys, doc, field):
    path = write_config(workdir / "bad.json", **doc)
    assert cli.main(["evaluate", "--config", path, "--scenario", "didactic"]) == 2
    assert f"'{field}'" in capsys.readouterr().err


def test_unknown_scenario_is_config_error(capsys):
    assert cli.main(["evaluate", "--scenario", "nowhere"]) == 2


def test_seed_precedence(workdir, monkeypatch):
    path = write_config(workdir / "c.json", seed=3, attempts=1)
    cli.main(["evaluate", "--config", path, "--scenario", "didactic", "--out", "a"])
    assert saved_config(workdir / "a")["seed"] == 3
    monkeypatch.setenv(SEED_ENV, "11")
    cli.main(["evaluate", "--config", path, "--scenario", "didactic", "--out", "b"])
    assert saved_config(workdir / "b")["seed"] == 11
    cli.main(["evaluate", "--config", path, "--scenario", "didactic", "--out", "c", "--seed", "5"])
    assert saved_config(workdir / "c")["seed"] == 5


def test_bad_seed_environment(monkeypatch, capsys):
    monkeypatch.setenv(SEED_ENV, "abc")
    assert cli.main(["evaluate", "--scenario", "didactic", "--n", "1"]) == 2


def test_train_and_resume_match(workdir):
    cfg = write_config(workdir / "t.json", ppo=SMALL_PPO, modality="lidar-only", scenario="didactic")
    assert cli.main(["train", "--config", cfg, "--iterations", "2", "--out", "full"]) == 0
    assert cli.main(["train", "--config", cfg, "--iterations", "1", "--out", "part"]) == 0
    assert {p.name for p in (workdir / "part").iterdir()} == {"run_config.json", "initial.ckpt", "final.ckpt",
                                                               "training_log.csv"}
    assert cli.main(["train", "--config", cfg, "--iterations", "2", "--out", "part", "--resume", "final"]) == 0
    a = TrainingLog.read_csv(workdir / "full/training_log.csv").rows
    b = TrainingLog.read_csv(workdir / "part/training_log.csv").rows
    np.testing.assert_equal(a, b)
    pa, pb = load_checkpoint(workdir / "full/final.ckpt").params, load_checkpoint(workdir / "part/final.ckpt").params
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_train_curriculum_from_config(workdir):
    cfg = write_config(workdir / "c.json", ppo=SMALL_PPO, modality="lidar-only",
                       schedule=[{"name": "one", "scenario": "didactic", "iterations": 1},
                                 {"name": "two", "scenario": "static-fixed", "iterations": 1,
                                  "mix": "didactic", "mix_ratio": 0.5}])
    assert cli.main(["train", "--config", cfg]) == 0
    out = workdir / "runs/train"
    assert {"initial.ckpt", "one.ckpt", "two.ckpt", "final.ckpt", "training_log.csv",
            "run_config.json"} <= {p.name for p in out.iterdir()}
    assert [r["stage"] for r in TrainingLog.read_csv(out / "training_log.csv").rows] == ["one", "two"]


def test_compare_and_export(workdir, capsys):
    assert cli.main(["compare", "--scenarios", "didactic", "--planners", "dwa", "--n", "2"]) == 0
    assert "didactic" in capsys.readouterr().out
    assert (workdir / "runs/compare/compare.csv").is_file()
    assert cli.main(["export-traces", "--scenario", "didactic", "--n", "2"]) == 0
    assert len(list((workdir / "runs/export-traces").glob("didactic_seed*_robot0.csv"))) == 2


def test_resolve_layers():
    base = from_dict({"seed": 2, "attempts": 4})
    assert resolve(base, {}, {}).seed == 2
    assert resolve(base, {}, {SEED_ENV: "9"}).seed == 9
    assert resolve(base, {"seed": 1}, {SEED_ENV: "9"}).seed == 1
    assert resolve(None, {}, {}) == RunConfig()
    with pytest.raises(ConfigError):
        resolve(base, {"attempts": 0}, {})


def test_config_file_round_trip(tmp_path):
    cfg = from_dict({"scenario": "didactic", "ppo": {"gamma": 0.9},
                     "schedule": [{"name": "a", "scenario": "didactic", "iterations": 2}]})
    cfg.write(tmp_path)
    from crowdsteer.config import load
    assert load(tmp_path / "run_config.json") == cfg
