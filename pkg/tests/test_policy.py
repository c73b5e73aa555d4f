import math

import numpy as np
import pytest
from hypothesis import given, settings
from scipy.integrate import trapezoid
from hypothesis import strategies as st

from crowdsteer import autodiff as ad
from crowdsteer.policy import (ActionDistribution, NetConfig, PolicyNet, clamp_action, distributions,
                               gaussian_kl_tensor, layer_shapes, log_prob, sample_action)
from crowdsteer.ppo import grad_check_policy, synthetic_batch


def inputs(cfg, n=2, seed=0):
    b = synthetic_batch(cfg, n, np.random.default_rng(seed))
    return b.lidar, b.image, b.goal, b.velocity


def test_zero_init_mean():
    cfg = NetConfig()
    out = PolicyNet(cfg, init="zeros").forward(*inputs(cfg))
    assert np.all(out.mean.data == [0.5, 0.0])


def test_desk_scale_shapes():
    s = layer_shapes(NetConfig(preset="desk-scale"))
    assert s["depth.fc3.w"] == (32 * 9 * 12, 512)
    assert s["depth.fc4.w"] == (512, 256)
    assert s["lidar.fc1.w"] == (16 * 128, 256)
    assert s["fc2.w"] == (256 + 256 + 4, 128)
    x = ad.Tensor(np.zeros((1, 3, 36, 48)))
    p = PolicyNet(NetConfig()).params
    c1 = ad.conv2d(x, p["depth.conv1.w"], p["depth.conv1.b"], 2)
    c2 = ad.conv2d(c1, p["depth.conv2.w"], p["depth.conv2.b"], 1)
    c3 = ad.conv2d(c2, p["depth.conv3.w"], p["depth.conv3.b"], 2)
    assert (c1.shape, c2.shape, c3.shape) == ((1, 64, 18, 24), (1, 64, 18, 24), (1, 32, 9, 12))


def test_paper_scale_shapes():
    s = layer_shapes(NetConfig(preset="paper-scale"))
    assert s["depth.fc3.w"] == (32 * 30 * 38, 512)


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 20.0))
def test_output_bounds(seed, scale):
    cfg = NetConfig()
    net = PolicyNet(cfg, seed=seed % 1000)
    for p in net.parameters():
        p.data = p.data * scale
    out = net.forward(*inputs(cfg, 3, seed))
    m = out.mean.data
    assert np.all((m[:, 0] >= 0) & (m[:, 0] <= 1)) and np.all(np.abs(m[:, 1]) <= 0.4)
    assert np.all(np.isfinite(out.value.data))


def test_forward_is_pure():
    cfg = NetConfig()
    net = PolicyNet(cfg, seed=3)
    x = inputs(cfg)
    a, b = net.forward(*x), net.forward(*x)
    assert np.array_equal(a.mean.data, b.mean.data) and np.array_equal(a.value.data, b.value.data)


def test_depth_branch_isolated():
    cfg = NetConfig()
    net = PolicyNet(cfg, seed=1)
    # cut the depth features out of the fusion layer: the image can no longer matter
    net.params["fc2.w"].data[256:512] = 0.0
    lidar, image, goal, vel = inputs(cfg)
    a = net.forward(lidar, image, goal, vel)
    b = net.forward(lidar, np.full_like(image, 1.4), goal, vel)
    assert np.array_equal(a.mean.data, b.mean.data)


def test_depth_only_model_drops_lidar_branch():
    s = layer_shapes(NetConfig(modality="depth-only"))
    assert not any(k.startswith("lidar.") for k in s)
    assert s["fc2.w"] == (256 + 4, 128)


def test_missing_stack_rejected():
    cfg = NetConfig()
    lidar, image, goal, vel = inputs(cfg)
    with pytest.raises(ValueError):
        PolicyNet(cfg).forward(lidar, None, goal, vel)
    with pytest.raises(ValueError):
        PolicyNet(cfg).forward(lidar[:, :2], image, goal, vel)


def test_sample_zero_std_is_mean():
    d = ActionDistribution(np.array([0.3, 0.1]), np.array([1e-300, 1e-300]))
    a, raw = sample_action(d, np.random.default_rng(0))
    np.testing.assert_allclose(a, [0.3, 0.1])


def test_deterministic_mode_returns_mean():
    d = ActionDistribution(np.array([0.3, 0.1]), np.array([0.5, 0.5]))
    a, _ = sample_action(d, np.random.default_rng(0), deterministic=True)
    assert np.array_equal(a, [0.3, 0.1])


def test_sample_is_seeded():
    d = ActionDistribution(np.array([0.5, 0.0]), np.array([0.3, 0.2]))
    assert np.array_equal(sample_action(d, np.random.default_rng(9))[1], sample_action(d, np.random.default_rng(9))[1])


def test_monte_carlo_clamped_mean():
    from scipy.stats import norm
    mu, sd, n = np.array([0.95, 0.38]), 0.1, 100_000
    d = ActionDistribution(mu, np.array([sd, sd]))
    rng = np.random.default_rng(0)
    acts = np.array([sample_action(d, rng)[0] for _ in range(n)])
    # E[min(X, c)] for X ~ N(mu, sd)
    for k, cap in enumerate((1.0, 0.4)):
        a = (cap - mu[k]) / sd
        expected = mu[k] * norm.cdf(a) - sd * norm.pdf(a) + cap * (1 - norm.cdf(a))
        se = acts[:, k].std() / math.sqrt(n)
        assert abs(acts[:, k].mean() - expected) < 3 * se


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_clamp_bounds(a, b, c, e):
    d = ActionDistribution(np.array([a, b]), np.array([abs(c) + 0.01, abs(e) + 0.01]))
    act, _ = sample_action(d, np.random.default_rng(0))
    assert 0.0 <= act[0] <= 1.0 and -0.4 <= act[1] <= 0.4
    assert np.array_equal(clamp_action(act), act)


def test_log_prob_at_mode():
    d = ActionDistribution(np.array([0.2, -0.1]), np.array([1.0, 1.0]))
    assert log_prob(d, d.mean) == pytest.approx(-math.log(2 * math.pi), abs=1e-15)
    assert log_prob(d, d.mean) == pytest.approx(-1.8379, abs=1e-4)
    assert log_prob(d, d.mean + [1.0, 0.0]) == pytest.approx(log_prob(d, d.mean) - 0.5, abs=1e-15)


def test_log_prob_normalizes():
    d = ActionDistribution(np.array([0.4, 0.05]), np.array([0.3, 0.15]))
    xs = np.linspace(0.4 - 3.0, 0.4 + 3.0, 601)
    ys = np.linspace(0.05 - 1.5, 0.05 + 1.5, 601)
    dens = np.exp([[log_prob(d, (x, y)) for y in ys] for x in xs])
    total = trapezoid(trapezoid(dens, ys, axis=1), xs)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_kl_identical_is_zero_and_nonnegative():
    rng = np.random.default_rng(0)
    m, ls = rng.normal(size=(5, 2)), rng.normal(size=2) * 0.3
    assert np.allclose(gaussian_kl_tensor(m, ls, ad.Tensor(m), ad.Tensor(ls)).data, 0.0, atol=1e-15)
    for _ in range(20):
        kl = gaussian_kl_tensor(m, ls, ad.Tensor(rng.normal(size=(5, 2))), ad.Tensor(rng.normal(size=2)))
        assert np.all(kl.data >= 0)


def test_distributions_from_output():
    cfg = NetConfig(modality="lidar-only")
    out = PolicyNet(cfg).forward(*inputs(cfg))
    ds = distributions(out)
    assert len(ds) == 2
    np.testing.assert_allclose(ds[0].std, [0.5, 0.2])


@pytest.mark.parametrize("modality", ["fusion", "lidar-only", "depth-only"])
def test_network_gradients(modality):
    worst, report, skipped = grad_check_policy(NetConfig(modality=modality), seed=0)
    assert worst < 1e-4, report
