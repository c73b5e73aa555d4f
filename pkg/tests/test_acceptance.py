"""Acceptance criteria A1-A9.

Each test records a one-line detail; the conftest summary prints one
PASS/FAIL line per criterion. A4 and A6 train for hours and need --runslow.
"""
import time

import numpy as np
import pytest

from crowdsteer import scenarios
from crowdsteer.checkpoint import load_checkpoint, save_checkpoint
from crowdsteer.env import EnvConfig
from crowdsteer.evaluation import DWAPlanner, PolicyPlanner, compute_metrics, run_scenario
from crowdsteer.policy import NetConfig, PolicyNet
from crowdsteer.ppo import (PPOConfig, Stage, Trainer, compute_gae, default_schedule, grad_check_policy, kl_penalty,
                            ppo_loss, synthetic_batch, train_curriculum)
from crowdsteer.reward import RewardConfig, collision_penalty, goal_reward, oscillation_penalty

import test_dwa
import test_ppo
import test_sensors


@pytest.fixture
def detail(record_property):
    def put(text):
        record_property("detail", text)
    return put


def greedy_success(net, scenario, seeds):
    res = run_scenario(scenario, PolicyPlanner(net), seeds)
    return compute_metrics(res).rows[0]


# ---------------------------------------------------------------- A1

def test_a1_reward_fidelity(detail):
    t0 = time.perf_counter()
    goal = (10.0, 0.0)
    checks = [
        goal_reward((9.0, 0.0), (9.95, 0.0), goal)[0] == 20.0,
        goal_reward((2.0, 0.0), (3.05, 0.0), goal, ((3.0, 0.0),))[0] == 10.0,
        collision_penalty(0.29) == -20.0,
        collision_penalty(0.3) == 0.0,
        oscillation_penalty(0.35) == -0.1 * 0.35,
        oscillation_penalty(-0.4) == -0.1 * 0.4,
        oscillation_penalty(0.3) == 0.0,
        goal_reward((5.0, 0.0), (5.1, 0.0), goal)[0] == 2.5 * (5.0 - 4.9),
        goal_reward((5.0, 0.0), (5.25, 0.0), goal)[0] == 0.625,
        RewardConfig().r_goal == 20.0 and RewardConfig().r_wp == 10.0 and RewardConfig().r_collision == -20.0,
    ]
    elapsed = time.perf_counter() - t0
    detail(f"{sum(checks)}/{len(checks)} exact examples in {elapsed * 1e3:.1f} ms")
    assert all(checks) and elapsed < 1.0


# ---------------------------------------------------------------- A2

def test_a2_gradient_check(detail):
    t0 = time.perf_counter()
    worst, report, skipped = grad_check_policy(NetConfig(modality="fusion", preset="desk-scale"), seed=0)
    elapsed = time.perf_counter() - t0
    detail(f"max relative error {worst:.2e} over {len(report)} tensors ({skipped} kink probes skipped), "
           f"{elapsed:.1f} s")
    assert worst < 1e-4 and elapsed < 300


# ---------------------------------------------------------------- A3

A3_PPO = PPOConfig(t_max=1024, workers=4, minibatch=256, epochs=4, kl_target=0.01, lr=3e-4, adam_eps=1e-5)
A3_EVAL_SEEDS = range(1000, 1020)


def test_a3_didactic_convergence(detail):
    t0 = time.perf_counter()
    spec = scenarios.get("didactic")
    net = PolicyNet(NetConfig(modality="lidar-only"), seed=1)
    trainer = Trainer(net, scenarios.source(spec), EnvConfig(max_steps=spec.max_steps), A3_PPO, seed=1)
    best, reached = 0.0, None
    for it in range(1, 51):
        trainer.step()
        if it % 5 == 0:
            rate = greedy_success(net, "didactic", A3_EVAL_SEEDS).success_rate
            best = max(best, rate)
            if rate >= 0.9:
                reached = it
                break
    elapsed = time.perf_counter() - t0
    detail(f"eval success {best:.2f} " + (f"at iteration {reached}" if reached else "not reached in 50 iterations")
           + f", {elapsed / 60:.1f} min")
    assert reached is not None and elapsed < 1800


# ---------------------------------------------------------------- A4

A4_PPO = PPOConfig(t_max=256, workers=4, minibatch=256, epochs=3, kl_target=0.01, lr=3e-4, adam_eps=1e-5)
A4_ITERATIONS = (20, 30, 30, 20)


@pytest.mark.slow
def test_a4_curriculum(detail, tmp_path):
    t0 = time.perf_counter()
    schedule = [Stage(s.name, s.scenario, n, s.mix, s.mix_ratio)
                for s, n in zip(default_schedule(mix_ratio=0.5), A4_ITERATIONS)]
    net = PolicyNet(NetConfig(modality="fusion", preset="desk-scale"), seed=0)
    res = train_curriculum(net, schedule, A4_PPO, EnvConfig(), seed=0, out_dir=tmp_path)
    policy = res.final.policy()
    static = greedy_success(policy, "narrow-static", range(10)).success_rate
    peds = greedy_success(policy, "narrow-ped-4", range(10)).success_rate
    elapsed = time.perf_counter() - t0
    detail(f"narrow-static {static:.2f} (need 0.9), narrow-ped-4 {peds:.2f} (need 0.6), "
           f"{len(res.log)} iterations, {elapsed / 3600:.1f} h")
    assert static >= 0.9 and peds >= 0.6 and elapsed < 12 * 3600


# ---------------------------------------------------------------- A5

def test_a5_dwa_baseline(detail):
    t0 = time.perf_counter()
    row = compute_metrics(run_scenario("narrow-static", DWAPlanner(), range(7, 17))).rows[0]
    elapsed = time.perf_counter() - t0
    detail(f"success {row.success_rate:.2f} over {row.attempts} attempts, {elapsed:.1f} s")
    assert row.success_rate == 1.0 and elapsed < 60


# ---------------------------------------------------------------- A6

A6_PPO = PPOConfig(t_max=1024, workers=4, minibatch=256, epochs=4, kl_target=0.01, lr=3e-4, adam_eps=1e-5)
A6_ITERATIONS = 80
A6_SCENARIOS = ("ablation-empty", "ablation-static")


def _ablation_policy(penalty: bool):
    net = PolicyNet(NetConfig(modality="lidar-only"), seed=0)
    stage = Stage("ablation", A6_SCENARIOS[0], A6_ITERATIONS, mix=A6_SCENARIOS[1], mix_ratio=0.5)
    env = EnvConfig(reward=RewardConfig(enable_oscillation_penalty=penalty))
    train_curriculum(net, [stage], A6_PPO, env, seed=0)
    return net


@pytest.mark.slow
def test_a6_oscillation_ablation(detail):
    osc = {}
    for penalty in (False, True):
        net = _ablation_policy(penalty)
        osc[penalty] = [greedy_success(net, s, range(10)).mean_oscillations for s in A6_SCENARIOS]
    detail(", ".join(f"{s}: {off:.1f} -> {on:.1f}" for s, off, on in zip(A6_SCENARIOS, osc[False], osc[True])))
    for off, on in zip(osc[False], osc[True]):
        assert on < off and off >= 2.0 * on


# ---------------------------------------------------------------- A7

def test_a7_sensor_oracles(detail):
    t0 = time.perf_counter()
    for seed in range(4):
        test_sensors.test_lidar_matches_sphere_tracing(seed)
    for cam in (test_sensors.DESK_CAMERA, test_sensors.PAPER_CAMERA):
        test_sensors.test_pedestrian_against_wall_matches_pinhole_projection(cam)
    test_sensors.test_noisy_lidar_clamped_over_a_million_samples()
    test_sensors.test_noisy_depth_clamped_over_a_million_samples()
    elapsed = time.perf_counter() - t0
    detail(f"lidar and depth oracles within 1e-6, clamps over 1e6 samples, {elapsed:.1f} s")
    assert elapsed < 60


# ---------------------------------------------------------------- A8

def test_a8_algorithmic_oracles(detail):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(200):
        r, v = rng.normal(size=20), rng.normal(size=20)
        d = (rng.random(20) < 0.15).astype(float)
        boot = float(rng.normal())
        adv, _ = compute_gae(r, v, d, 0.99, 0.95, boot, normalize=False)
        worst = max(worst, float(np.abs(adv - test_ppo.gae_oracle(r, v, d, 0.99, 0.95, boot)).max()))
    assert worst < 1e-10

    test_dwa.test_argmax_matches_brute_force()

    net = PolicyNet(NetConfig(modality="lidar-only"), seed=0)
    b = synthetic_batch(net.config, 6, np.random.default_rng(0), old_net=net)
    _, terms = ppo_loss(net, b, 1.0, 50.0, 0.003, reduction="sum")
    t = 0.003
    assert terms.surrogate == pytest.approx(b.advantages.sum(), abs=1e-12) and terms.hinge == 0.0
    assert kl_penalty(t, 1.0, 50.0, t)[1] == 0.0
    assert kl_penalty(3 * t, 1.0, 50.0, t)[1] == pytest.approx(50.0 * t * t, rel=1e-12)
    elapsed = time.perf_counter() - t0
    detail(f"GAE max deviation {worst:.1e}, DWA argmax on 100 worlds, 3 loss examples, {elapsed:.1f} s")
    assert elapsed < 60


# ---------------------------------------------------------------- A9

A9_PPO = PPOConfig(t_max=128, workers=3, minibatch=128, epochs=2, kl_target=0.01)


def _a9_trainer(workers):
    spec = scenarios.get("random-dynamic")
    net = PolicyNet(NetConfig(modality="fusion"), seed=9)
    cfg = PPOConfig(**{**A9_PPO.__dict__, "workers": workers})
    return Trainer(net, scenarios.source(spec), EnvConfig(max_steps=spec.max_steps), cfg, seed=9)


def test_a9_determinism(detail, tmp_path):
    t0 = time.perf_counter()
    for workers in (1, 3):
        straight = _a9_trainer(workers)
        straight.train(3)
        first = _a9_trainer(workers)
        first.train(1)
        save_checkpoint(tmp_path / "mid.ckpt", first.checkpoint())
        resumed = _a9_trainer(workers)
        resumed.restore(load_checkpoint(tmp_path / "mid.ckpt"))
        resumed.train(2)
        np.testing.assert_equal(resumed.log.rows, straight.log.rows)
        a, b = resumed.net.state(), straight.net.state()
        assert all(np.array_equal(a[k], b[k]) for k in a)
    policy = load_checkpoint(tmp_path / "mid.ckpt").policy()
    runs = [run_scenario("narrow-ped-4", PolicyPlanner(policy), [4]) for _ in range(2)]
    for x, y in zip(*runs):
        assert np.array_equal(x.trace, y.trace) and x.outcome == y.outcome
    elapsed = time.perf_counter() - t0
    detail(f"training logs, parameters and episode traces bit-identical across resume, {elapsed:.1f} s")
    assert elapsed < 300
