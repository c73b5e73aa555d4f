"""Four-branch fusion policy: lidar conv branch, depth conv branch, goal, velocity.

Branch outputs (256 features each) are concatenated with the goal and velocity
observations and fused by a 128-unit layer. Heads give the Gaussian mean of
(v, omega) and a state-value estimate; the log standard deviation is a free
2-vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .world import OMEGA_MAX, V_MAX

MODALITIES = ("fusion", "lidar-only", "depth-only")
IMAGE_PRESETS = {"paper-scale": (120, 150), "desk-scale": (36, 48)}
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NetConfig:
    modality: str = "fusion"
    preset: str = "desk-scale"
    lidar_beams: int = 512
    stack: int = 3
    branch_width: int = 256
    fusion_width: int = 128
    log_std_init: tuple[float, float] = (math.log(0.5), math.log(0.2))
    # Ranges enter the convolutions as proximity 1 - scale * range, so open
    # space is ~0 and near obstacles approach 1.
    lidar_scale: float = 0.25
    depth_scale: float = 0.2

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.preset not in IMAGE_PRESETS:
            raise ValueError(f"preset must be one of {sorted(IMAGE_PRESETS)}, got {self.preset!r}")

    @property
    def image_shape(self) -> tuple[int, int]:
        return IMAGE_PRESETS[self.preset]

    @property
    def uses_lidar(self) -> bool:
        return self.modality != "depth-only"

    @property
    def uses_camera(self) -> bool:
        return self.modality != "lidar-only"


def _conv_len(n: int, stride: int) -> int:
    return -(-n // stride)


def layer_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape for a configuration (insertion order is canonical)."""
    shapes: dict[str, tuple[int, ...]] = {}
    fused_in = 4
    if cfg.uses_lidar:
        n = _conv_len(_conv_len(cfg.lidar_beams, 2), 2)
        shapes["lidar.conv1.w"] = (32, cfg.stack, 5)
        shapes["lidar.conv1.b"] = (32,)
        shapes["lidar.conv2.w"] = (16, 32, 3)
        shapes["lidar.conv2.b"] = (16,)
        shapes["lidar.fc1.w"] = (16 * n, cfg.branch_width)
        shapes["lidar.fc1.b"] = (cfg.branch_width,)
        fused_in += cfg.branch_width
    if cfg.uses_camera:
        h, w = cfg.image_shape
        h3 = _conv_len(_conv_len(h, 2), 2)
        w3 = _conv_len(_conv_len(w, 2), 2)
        shapes["depth.conv1.w"] = (64, cfg.stack, 5, 5)
        shapes["depth.conv1.b"] = (64,)
        shapes["depth.conv2.w"] = (64, 64, 5, 5)
        shapes["depth.conv2.b"] = (64,)
        shapes["depth.conv3.w"] = (32, 64, 3, 3)
        shapes["depth.conv3.b"] = (32,)
        shapes["depth.fc3.w"] = (32 * h3 * w3, 512)
        shapes["depth.fc3.b"] = (512,)
        shapes["depth.fc4.w"] = (512, cfg.branch_width)
        shapes["depth.fc4.b"] = (cfg.branch_width,)
        fused_in += cfg.branch_width
    shapes["fc2.w"] = (fused_in, cfg.fusion_width)
    shapes["fc2.b"] = (cfg.fusion_width,)
    shapes["mean.w"] = (cfg.fusion_width, 2)
    shapes["mean.b"] = (2,)
    shapes["value.w"] = (cfg.fusion_width, 1)
    shapes["value.b"] = (1,)
    shapes["log_std"] = (2,)
    return shapes


def _fans(name: str, shape) -> tuple[int, int]:
    if len(shape) == 2:
        return shape[0], shape[1]
    receptive = int(np.prod(shape[2:]))
    return shape[1] * receptive, shape[0] * receptive


@dataclass
class PolicyOutput:
    mean: Tensor  # (N, 2)
    log_std: Tensor  # (2,)
    value: Tensor  # (N,)


@dataclass(frozen=True)
class ActionDistribution:
    mean: np.ndarray  # (2,)
    std: np.ndarray  # (2,)


class PolicyNet:
    def __init__(self, config: NetConfig = NetConfig(), seed: int = 0, init: str = "glorot"):
        self.config = config
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        for name, shape in layer_shapes(config).items():
            if name == "log_std":
                data = np.array(config.log_std_init, dtype=np.float64)
            elif init == "zeros" or name.endswith(".b"):
                data = np.zeros(shape)
            elif init == "glorot":
                data = ad.glorot_uniform(rng, shape, *_fans(name, shape))
            else:
                raise ValueError(f"unknown init {init!r}")
            self.params[name] = ad.parameter(data, name)

    # -- parameter snapshots -------------------------------------------------
    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = layer_shapes(self.config)
        if set(state) != set(expected):
            raise ValueError(f"parameter set mismatch: missing {sorted(set(expected) - set(state))}, "
                             f"unexpected {sorted(set(state) - set(expected))}")
        for k, shape in expected.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{k}: shape {arr.shape} does not match architecture {shape}")
            self.params[k].data = arr.copy()

    def clone(self) -> "PolicyNet":
        other = PolicyNet.__new__(PolicyNet)
        other.config = self.config
        other.params = {k: ad.parameter(v.data.copy(), k) for k, v in self.params.items()}
        return other

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- forward ---------------------------------------------------------------
    def forward(self, lidar, image, goal, velocity) -> PolicyOutput:
        """Batched forward pass.

        ``lidar`` (N, 3, beams), ``image`` (N, 3, H, W), ``goal`` and
        ``velocity`` (N, 2). Inputs for a branch the modality lacks are ignored.
        """
        p = self.params
        cfg = self.config
        goal = np.asarray(goal, dtype=np.float64)
        n = goal.shape[0]
        feats = []
        if cfg.uses_lidar:
            if lidar is None:
                raise ValueError("lidar stack required for modality " + cfg.modality)
            x = ad.Tensor(1.0 - np.asarray(lidar, dtype=np.float64) * cfg.lidar_scale)
            if x.shape[1:] != (cfg.stack, cfg.lidar_beams):
                raise ValueError(f"lidar stack must be (N, {cfg.stack}, {cfg.lidar_beams}), got {x.shape}")
            x = ad.relu(ad.conv1d(x, p["lidar.conv1.w"], p["lidar.conv1.b"], 2, name="lidar.conv1"))
            x = ad.relu(ad.conv1d(x, p["lidar.conv2.w"], p["lidar.conv2.b"], 2, name="lidar.conv2"))
            x = ad.reshape(x, (n, -1))
            feats.append(ad.dense(x, p["lidar.fc1.w"], p["lidar.fc1.b"], "relu", name="lidar.fc1"))
        if cfg.uses_camera:
            if image is None:
                raise ValueError("image stack required for modality " + cfg.modality)
            x = ad.Tensor(1.0 - np.asarray(image, dtype=np.float64) * cfg.depth_scale)
            if x.shape[1:] != (cfg.stack, *cfg.image_shape):
                raise ValueError(f"image stack must be (N, {cfg.stack}, {cfg.image_shape}), got {x.shape}")
            x = ad.relu(ad.conv2d(x, p["depth.conv1.w"], p["depth.conv1.b"], 2, name="depth.conv1"))
            x = ad.relu(ad.conv2d(x, p["depth.conv2.w"], p["depth.conv2.b"], 1, name="depth.conv2"))
            x = ad.relu(ad.conv2d(x, p["depth.conv3.w"], p["depth.conv3.b"], 2, name="depth.conv3"))
            x = ad.reshape(x, (n, -1))
            x = ad.dense(x, p["depth.fc3.w"], p["depth.fc3.b"], "relu", name="depth.fc3")
            feats.append(ad.dense(x, p["depth.fc4.w"], p["depth.fc4.b"], "relu", name="depth.fc4"))
        feats.append(ad.Tensor(goal))
        feats.append(ad.Tensor(np.asarray(velocity, dtype=np.float64)))
        h = ad.dense(ad.concat(feats, axis=1), p["fc2.w"], p["fc2.b"], "relu", name="fc2")
        raw = ad.dense(h, p["mean.w"], p["mean.b"], name="mean")
        mean_v = ad.sigmoid(ad.column(raw, 0)) * V_MAX
        mean_w = ad.tanh(ad.column(raw, 1)) * OMEGA_MAX
        mean = ad.stack_columns([mean_v, mean_w])
        value = ad.reshape(ad.dense(h, p["value.w"], p["value.b"], name="value"), (n,))
        return PolicyOutput(mean=mean, log_std=p["log_std"], value=value)

    def forward_obs(self, observations) -> PolicyOutput:
        lidar, image, goal, vel = batch_observations(observations)
        return self.forward(lidar, image, goal, vel)


def batch_observations(observations):
    lidar = np.stack([o.lidar for o in observations])
    image = None if observations[0].image is None else np.stack([o.image for o in observations])
    goal = np.stack([o.goal for o in observations])
    vel = np.stack([o.velocity for o in observations])
    return lidar, image, goal, vel


def distributions(out: PolicyOutput) -> list[ActionDistribution]:
    std = np.exp(out.log_std.data)
    return [ActionDistribution(mean=m.copy(), std=std.copy()) for m in out.mean.data]


def clamp_action(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    return np.array([min(max(raw[0], 0.0), V_MAX), min(max(raw[1], -OMEGA_MAX), OMEGA_MAX)])


def sample_action(dist: ActionDistribution, rng: np.random.Generator | None = None,
                  deterministic: bool = False):
    """Returns ``(executed_action, raw_sample)``; deterministic mode uses the mean."""
    if deterministic or rng is None:
        raw = dist.mean.copy()
    else:
        raw = dist.mean + dist.std * rng.standard_normal(2)
    return clamp_action(raw), raw


def log_prob(dist: ActionDistribution, action) -> float:
    """Diagonal Gaussian log-density at the (pre-clamp) action."""
    z = (np.asarray(action, dtype=np.float64) - dist.mean) / dist.std
    return float(np.sum(-0.5 * z * z - np.log(dist.std) - 0.5 * LOG_2PI))


def log_prob_tensor(mean: Tensor, log_std: Tensor, actions: np.ndarray) -> Tensor:
    """Per-sample log-density (N,) as a differentiable tensor."""
    inv_std = ad.exp(-log_std)
    z = (ad.Tensor(actions) - mean) * inv_std
    per = ad.square(z) * -0.5 - log_std
    return ad.sum_axis(per, 1) - LOG_2PI


def gaussian_kl_tensor(old_mean: np.ndarray, old_log_std: np.ndarray, mean: Tensor,
                       log_std: Tensor) -> Tensor:
    """KL[old || new] per sample (N,) for diagonal Gaussians, closed form."""
    old_var = np.exp(2.0 * old_log_std)
    inv_var = ad.exp(log_std * -2.0)
    diff = ad.Tensor(old_mean) - mean
    terms = log_std - old_log_std + (ad.square(diff) + old_var) * inv_var * 0.5 - 0.5
    return ad.sum_axis(terms, 1)
