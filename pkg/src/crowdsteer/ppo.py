"""PPO with an adaptive KL penalty and hinge, GAE advantages and Adam.

Rollout workers run in lockstep inside one process: every worker owns its
environment and action-sampling RNG, and the policy is evaluated once per
step on the stacked observations of all active robots. Batch composition
therefore depends on the worker count, and results are reproducible per
``(seed, workers)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from . import scenarios
from .checkpoint import Checkpoint, save_checkpoint
from .env import GOAL, EnvConfig, NavEnv
from .policy import PolicyNet, batch_observations, gaussian_kl_tensor, log_prob_tensor, clamp_action


class PPOError(RuntimeError):
    pass


@dataclass(frozen=True)
class PPOConfig:
    t_max: int = 1024
    epochs: int = 4
    minibatch: int = 256
    gamma: float = 0.99
    lam: float = 0.95
    kl_target: float = 0.003
    beta: float = 1.0
    xi: float = 50.0
    lr: float = 3e-4
    workers: int = 4
    iterations: int = 200
    value_coef: float = 0.5
    # "mean" averages the surrogate over the minibatch; "sum" adds it up.
    reduction: str = "mean"
    max_grad_norm: float | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must be in [0, 1]")
        if self.kl_target <= 0:
            raise ValueError("kl_target must be positive")
        if self.xi < 0:
            raise ValueError("xi must be non-negative")
        if min(self.t_max, self.epochs, self.minibatch, self.workers) < 1 or self.iterations < 0:
            raise ValueError("t_max, epochs, minibatch and workers must be >= 1, iterations >= 0")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")


# ---------------------------------------------------------------- advantages

def compute_gae(rewards, values, dones, gamma: float, lam: float, bootstrap: float = 0.0,
                normalize: bool = True):
    """Advantages and value targets for one trajectory segment.

    ``dones[t]`` marks that step ``t`` ended the episode; ``bootstrap`` is
    V(s_T) used when the last step was truncated rather than terminal.
    Returns ``(advantages, targets)`` where targets use the raw advantages.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    n = len(rewards)
    if n == 0:
        raise PPOError("compute_gae on an empty batch")
    if values.shape != (n,) or dones.shape != (n,):
        raise PPOError("rewards, values and dones must have equal length")
    next_values = np.append(values[1:], bootstrap)
    adv = np.empty(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values[t] * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    targets = adv + values
    if normalize:
        adv = normalize_advantages(adv)
    return adv, targets


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    std = adv.std()
    return (adv - adv.mean()) / (std if std > 1e-8 else 1.0)


# ---------------------------------------------------------------- batch

@dataclass
class RolloutBatch:
    lidar: np.ndarray | None
    image: np.ndarray | None
    goal: np.ndarray
    velocity: np.ndarray
    raw_actions: np.ndarray  # pre-clamp samples
    actions: np.ndarray  # executed (clamped)
    log_probs: np.ndarray  # under pi_old
    old_mean: np.ndarray
    old_log_std: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray | None = None
    targets: np.ndarray | None = None

    def __len__(self):
        return len(self.rewards)

    def subset(self, idx) -> "RolloutBatch":
        def pick(a):
            return None if a is None else a[idx]
        return RolloutBatch(pick(self.lidar), pick(self.image), self.goal[idx], self.velocity[idx],
                            self.raw_actions[idx], self.actions[idx], self.log_probs[idx], self.old_mean[idx],
                            self.old_log_std, self.rewards[idx], self.values[idx], self.dones[idx],
                            pick(self.advantages), pick(self.targets))


# ---------------------------------------------------------------- loss

def kl_penalty(kl, beta: float, xi: float, kl_target: float):
    """``(beta * KL, xi * max(0, KL - 2 KL_target)^2)`` for a scalar KL (Tensor or float)."""
    if isinstance(kl, ad.Tensor):
        return kl * beta, ad.square(ad.hinge(kl - 2.0 * kl_target)) * xi
    return beta * kl, xi * max(0.0, kl - 2.0 * kl_target) ** 2


@dataclass
class LossTerms:
    surrogate: float
    kl: float
    kl_term: float
    hinge: float
    value_loss: float
    total: float
    max_ratio: float


def ppo_loss(net: PolicyNet, batch: RolloutBatch, beta: float, xi: float, kl_target: float,
             value_coef: float = 0.5, reduction: str = "mean"):
    """Loss to minimize: ``-surrogate + beta KL + xi hinge^2 + value_coef * value MSE``.

    The surrogate is ratio * advantage with ratio = exp(log pi - log pi_old),
    averaged (or summed) over the batch; KL is the batch-mean closed-form
    KL[pi_old || pi]. Returns ``(loss_tensor, LossTerms)``.
    """
    if batch.advantages is None or batch.targets is None:
        raise PPOError("advantages must be computed before the loss")
    out = net.forward(batch.lidar, batch.image, batch.goal, batch.velocity)
    logp = log_prob_tensor(out.mean, out.log_std, batch.raw_actions)
    ratio = ad.exp(logp - ad.Tensor(batch.log_probs))
    if not np.all(np.isfinite(ratio.data)):
        raise PPOError("non-finite probability ratio; aborting update")
    weighted = ratio * ad.Tensor(batch.advantages)
    surrogate = ad.sum_all(weighted) if reduction == "sum" else ad.mean_all(weighted)
    kl = ad.mean_all(gaussian_kl_tensor(batch.old_mean, batch.old_log_std, out.mean, out.log_std))
    kl_term, hinge = kl_penalty(kl, beta, xi, kl_target)
    value_loss = ad.mean_all(ad.square(out.value - ad.Tensor(batch.targets)))
    loss = kl_term + hinge - surrogate + value_loss * value_coef
    terms = LossTerms(float(surrogate.data), float(kl.data), float(kl_term.data), float(hinge.data),
                      float(value_loss.data), float(loss.data), float(ratio.data.max()))
    return loss, terms


def mean_kl(net: PolicyNet, batch: RolloutBatch, chunk: int = 512) -> float:
    """Batch-mean KL[pi_old || pi] without recording gradients."""
    total = 0.0
    for s in range(0, len(batch), chunk):
        b = batch.subset(slice(s, s + chunk))
        out = net.forward(b.lidar, b.image, b.goal, b.velocity)
        total += float(gaussian_kl_tensor(b.old_mean, b.old_log_std, out.mean, out.log_std).data.sum())
    return total / len(batch)


# ---------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params: dict[str, ad.Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "lr": self.lr,
                "m": {k: v.copy() for k, v in self.m.items()}, "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}


# ---------------------------------------------------------------- update

@dataclass
class UpdateStats:
    kl: float
    beta: float
    lr: float
    epochs: int
    reverted: bool
    surrogate: float
    value_loss: float
    kl_term: float
    hinge: float


def adapt_beta(beta: float, kl: float, kl_target: float) -> float:
    if kl > 1.5 * kl_target:
        return beta * 2.0
    if kl < kl_target / 1.5:
        return beta / 2.0
    return beta


def _gradients(net: PolicyNet, loss_fn):
    for p in net.parameters():
        p.zero_grad()
    with ad.Tape() as tape:
        loss, terms = loss_fn()
    tape.backward(loss)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in net.params.items()}
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ad.NonFiniteGradient(f"non-finite gradient for {k}")
    return grads, terms


def update(net: PolicyNet, opt: Adam, batch: RolloutBatch, config: PPOConfig, beta: float,
           rng: np.random.Generator) -> UpdateStats:
    """Several epochs of shuffled minibatch Adam steps, then adapt beta.

    Stops early when the batch KL exceeds 4x target; if it exceeds 10x the
    parameters and optimizer are restored and the learning rate halved.
    """
    saved_params, saved_opt = net.state(), opt.state()
    n = len(batch)
    sums = np.zeros(4)
    count = 0
    kl = 0.0
    epochs = 0
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for s in range(0, n, config.minibatch):
            mb = batch.subset(perm[s:s + config.minibatch])
            grads, terms = _gradients(net, lambda: ppo_loss(net, mb, beta, config.xi, config.kl_target,
                                                             config.value_coef, config.reduction))
            if config.max_grad_norm is not None:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > config.max_grad_norm:
                    scale = config.max_grad_norm / norm
                    grads = {k: g * scale for k, g in grads.items()}
            opt.step(grads)
            sums += (terms.surrogate, terms.value_loss, terms.kl_term, terms.hinge)
            count += 1
        epochs += 1
        kl = mean_kl(net, batch)
        if kl > 4.0 * config.kl_target:
            break
    reverted = kl > 10.0 * config.kl_target
    if reverted:
        net.load_state(saved_params)
        opt.load_state(saved_opt)
        opt.lr = saved_opt["lr"] / 2.0
    new_beta = adapt_beta(beta, kl, config.kl_target)
    avg = sums / max(count, 1)
    return UpdateStats(kl, new_beta, opt.lr, epochs, reverted, *map(float, avg))


# ---------------------------------------------------------------- training log

LOG_COLUMNS = ("iteration", "stage", "steps", "episodes", "mean_reward", "success_rate", "mean_length",
               "mean_kl", "beta", "lr", "epochs", "reverted", "surrogate", "value_loss", "kl_term", "hinge")


class TrainingLog:
    """Append-only table, one row per iteration."""

    def __init__(self, rows=None):
        self._rows: list[dict] = [dict(r) for r in rows or []]

    def append(self, row: dict) -> None:
        missing = set(LOG_COLUMNS) - set(row)
        if missing:
            raise ValueError(f"log row missing {sorted(missing)}")
        self._rows.append({k: row[k] for k in LOG_COLUMNS})

    @property
    def rows(self) -> tuple[dict, ...]:
        return tuple(dict(r) for r in self._rows)

    def __len__(self):
        return len(self._rows)

    def column(self, name: str) -> list:
        return [r[name] for r in self._rows]

    @staticmethod
    def _fmt(v) -> str:
        return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for r in self._rows:
                w.writerow([self._fmt(r[k]) for k in LOG_COLUMNS])

    @classmethod
    def read_csv(cls, path) -> "TrainingLog":
        ints = {"iteration", "steps", "episodes", "epochs"}
        rows = []
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                row = {}
                for k in LOG_COLUMNS:
                    if k == "stage":
                        row[k] = r[k]
                    elif k == "reverted":
                        row[k] = r[k] == "True"
                    elif k in ints:
                        row[k] = int(r[k])
                    else:
                        row[k] = float(r[k])
                rows.append(row)
        return cls(rows)


# ---------------------------------------------------------------- trainer

@dataclass
class _Segment:
    key: tuple[int, int]
    samples: list = field(default_factory=list)  # (obs, raw, action, logp, mean, value)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    bootstrap: float = 0.0


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _set_rng_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state


class Trainer:
    """Collects rollouts from ``config.workers`` environments and applies PPO updates."""

    def __init__(self, net: PolicyNet, source, env_config: EnvConfig, config: PPOConfig = PPOConfig(),
                 seed: int = 0, stage: str = "train"):
        self.net = net
        self.config = config
        self.env_config = replace(env_config, use_camera=net.config.uses_camera)
        self.stage = stage
        self.seed = seed
        children = np.random.SeedSequence(seed).spawn(2 * config.workers + 1)
        self.envs = [NavEnv(source, self.env_config, seed=children[2 * k]) for k in range(config.workers)]
        self.action_rngs = [np.random.default_rng(children[2 * k + 1]) for k in range(config.workers)]
        self.rng = np.random.default_rng(children[-1])
        self.opt = Adam(net.params, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.beta = config.beta
        self.iteration = 0
        self.log = TrainingLog()

    # -- state for checkpoints ------------------------------------------------
    def rng_states(self) -> dict:
        states = {"trainer": _rng_state(self.rng)}
        for k, env in enumerate(self.envs):
            states[f"env{k}"] = _rng_state(env.rng)
            states[f"action{k}"] = _rng_state(self.action_rngs[k])
        return states

    def load_rng_states(self, states: dict) -> None:
        if len([k for k in states if k.startswith("env")]) != len(self.envs):
            raise PPOError("checkpoint worker count differs from configuration")
        _set_rng_state(self.rng, states["trainer"])
        for k, env in enumerate(self.envs):
            _set_rng_state(env.rng, states[f"env{k}"])
            _set_rng_state(self.action_rngs[k], states[f"action{k}"])

    def checkpoint(self, **extra) -> Checkpoint:
        """Everything needed to resume: parameters, Adam moments, beta, counters, RNGs, log."""
        return Checkpoint.from_policy(
            self.net, optimizer=self.opt.state(),
            counters={"iteration": self.iteration, "beta": self.beta, "stage": self.stage,
                      "seed": self.seed, "workers": self.config.workers},
            rng_states=self.rng_states(),
            extra={"log": [dict(r) for r in self.log.rows], **extra})

    def restore(self, ckpt: Checkpoint) -> None:
        if ckpt.net_config != self.net.config:
            raise PPOError("checkpoint network configuration differs from the trainer's network")
        if ckpt.optimizer is None:
            raise PPOError("checkpoint carries no optimizer state; cannot resume training")
        self.net.load_state(ckpt.params)
        self.opt.load_state(ckpt.optimizer)
        self.beta = float(ckpt.counters["beta"])
        self.iteration = int(ckpt.counters["iteration"])
        self.load_rng_states(ckpt.rng_states)
        self.log = TrainingLog(ckpt.extra.get("log", []))

    # -- collection ------------------------------------------------------------
    def _act(self, obs_list):
        out = self.net.forward(*batch_observations(obs_list))
        return out.mean.data, out.log_std.data, out.value.data

    def collect(self):
        """One synchronous rollout of ``t_max`` steps per worker.

        Returns ``(RolloutBatch, episode_stats)``; episodes start fresh at
        every call and unfinished ones are bootstrapped from V(s_T).
        """
        cfg = self.config
        std_log = None
        obs = [env.reset() for env in self.envs]
        open_segs: dict[tuple[int, int], _Segment] = {}
        done_segs: list[_Segment] = []
        returns: dict[tuple[int, int], float] = {}
        episodes = []  # (return, outcome, length)
        lengths: dict[tuple[int, int], int] = {}
        for _t in range(cfg.t_max):
            keys = [(w, i) for w in range(len(self.envs)) for i in self.envs[w].active]
            mean, log_std, value = self._act([obs[w][i] for w, i in keys])
            std_log = log_std
            std = np.exp(log_std)
            actions: list[dict] = [{} for _ in self.envs]
            for n, (w, i) in enumerate(keys):
                raw = mean[n] + std * self.action_rngs[w].standard_normal(2)
                act = clamp_action(raw)
                z = (raw - mean[n]) / std
                logp = float(np.sum(-0.5 * z * z - log_std) - math.log(2.0 * math.pi))
                seg = open_segs.setdefault((w, i), _Segment((w, i)))
                seg.samples.append((obs[w][i], raw, act, logp, mean[n].copy(), float(value[n])))
                actions[w][i] = act
            for w, env in enumerate(self.envs):
                if not actions[w]:
                    continue
                res = env.step(actions[w])
                for i, r in res.rewards.items():
                    seg = open_segs[(w, i)]
                    seg.rewards.append(r)
                    seg.dones.append(res.dones[i])
                    returns[(w, i)] = returns.get((w, i), 0.0) + r
                    lengths[(w, i)] = lengths.get((w, i), 0) + 1
                    if res.dones[i]:
                        done_segs.append(open_segs.pop((w, i)))
                        episodes.append((returns.pop((w, i)), res.infos[i].outcome, lengths.pop((w, i))))
                obs[w] = res.observations
                if env.done:
                    obs[w] = env.reset()
        pending = [k for k in open_segs]
        if pending:
            _, _, value = self._act([obs[w][i] for w, i in pending])
            for n, k in enumerate(pending):
                open_segs[k].bootstrap = float(value[n])
                done_segs.append(open_segs[k])
        return self._assemble(done_segs, std_log), episodes

    def _assemble(self, segs: list[_Segment], log_std) -> RolloutBatch:
        cfg = self.config
        obs, raws, acts, logps, means, values, rewards, dones, advs, targets = ([] for _ in range(10))
        for seg in segs:
            vals = [s[5] for s in seg.samples]
            adv, tgt = compute_gae(seg.rewards, vals, seg.dones, cfg.gamma, cfg.lam, seg.bootstrap, normalize=False)
            for s in seg.samples:
                obs.append(s[0])
                raws.append(s[1])
                acts.append(s[2])
                logps.append(s[3])
                means.append(s[4])
                values.append(s[5])
            rewards += seg.rewards
            dones += seg.dones
            advs.append(adv)
            targets.append(tgt)
        if not obs:
            raise PPOError("rollout produced no samples")
        lidar, image, goal, vel = batch_observations(obs)
        if not self.net.config.uses_lidar:
            lidar = None
        return RolloutBatch(
            lidar=lidar, image=image, goal=goal, velocity=vel,
            raw_actions=np.array(raws), actions=np.array(acts), log_probs=np.array(logps),
            old_mean=np.array(means), old_log_std=np.array(log_std, dtype=np.float64),
            rewards=np.array(rewards, dtype=np.float64), values=np.array(values),
            dones=np.array(dones, dtype=np.float64),
            advantages=normalize_advantages(np.concatenate(advs)), targets=np.concatenate(targets),
        )

    # -- iteration -------------------------------------------------------------
    def step(self) -> dict:
        batch, episodes = self.collect()
        stats = update(self.net, self.opt, batch, self.config, self.beta, self.rng)
        self.beta = stats.beta
        self.iteration += 1
        rets = [e[0] for e in episodes]
        row = {
            "iteration": self.iteration,
            "stage": self.stage,
            "steps": len(batch),
            "episodes": len(episodes),
            "mean_reward": float(np.mean(rets)) if rets else float("nan"),
            "success_rate": float(np.mean([e[1] == GOAL for e in episodes])) if episodes else float("nan"),
            "mean_length": float(np.mean([e[2] for e in episodes])) if episodes else float("nan"),
            "mean_kl": stats.kl,
            "beta": stats.beta,
            "lr": stats.lr,
            "epochs": stats.epochs,
            "reverted": stats.reverted,
            "surrogate": stats.surrogate,
            "value_loss": stats.value_loss,
            "kl_term": stats.kl_term,
            "hinge": stats.hinge,
        }
        self.log.append(row)
        return row

    def train(self, iterations: int | None = None, callback=None) -> TrainingLog:
        n = self.config.iterations if iterations is None else iterations
        for _ in range(n):
            row = self.step()
            if callback is not None and callback(self, row) is False:
                break
        return self.log


def config_dict(cfg) -> dict:
    return asdict(cfg)


def ppo_config_from_dict(d: dict) -> PPOConfig:
    names = {f.name for f in fields(PPOConfig)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown PPO config field(s): {sorted(unknown)}")
    return PPOConfig(**d)


# ---------------------------------------------------------------- curriculum

@dataclass(frozen=True)
class Stage:
    """One curriculum stage; ``mix`` interleaves episodes of another scenario with probability ``mix_ratio``."""
    name: str
    scenario: str
    iterations: int
    mix: str | None = None
    mix_ratio: float = 0.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("stage iterations must be >= 0")
        if not 0.0 <= self.mix_ratio < 1.0:
            raise ValueError("mix_ratio must be in [0, 1)")
        if self.mix_ratio > 0 and self.mix is None:
            raise ValueError("mix_ratio set without a mix scenario")

    def source_and_steps(self):
        spec = scenarios.get(self.scenario)
        if self.mix is None or self.mix_ratio == 0.0:
            return scenarios.source(spec), spec.max_steps
        other = scenarios.get(self.mix)
        src = scenarios.mixture([(spec, 1.0 - self.mix_ratio), (other, self.mix_ratio)])
        return src, max(spec.max_steps, other.max_steps)


def default_schedule(iterations: int = 200, mix_ratio: float = 0.5) -> tuple[Stage, ...]:
    return (
        Stage("static-fixed", "static-fixed", iterations),
        Stage("static-random", "static-random", iterations),
        Stage("random-dynamic", "random-dynamic", iterations),
        Stage("occluded-corridor", "occluded-corridor", iterations, mix="static-random", mix_ratio=mix_ratio),
    )


@dataclass
class CurriculumResult:
    initial: Checkpoint
    checkpoints: list[Checkpoint]  # one per completed stage
    log: TrainingLog
    halted: str | None = None  # diagnostic when a stage stopped improving

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1] if self.checkpoints else self.initial


def _stage_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def train_curriculum(net: PolicyNet, schedule, config: PPOConfig = PPOConfig(), env_config: EnvConfig = EnvConfig(),
                     seed: int = 0, patience: int | None = None, out_dir=None, callback=None,
                     on_stage_start=None) -> CurriculumResult:
    """Run ``schedule`` in order, warm-starting every stage from the previous one's parameters.

    Each stage gets a fresh optimizer and its own seed derived from ``seed``;
    beta and the (possibly halved) learning rate carry over. With
    ``patience`` set, a stage whose best mean episode reward has not improved
    for that many iterations halts the whole run. Checkpoints go to
    ``out_dir/<stage>.ckpt`` and ``out_dir/final.ckpt`` when a directory is given.
    ``callback(trainer, row)`` runs after every iteration and
    ``on_stage_start(stage, trainer)`` before each stage's first one.
    """
    initial = Checkpoint.from_policy(net, counters={"iteration": 0, "stage": "initial"})
    log = TrainingLog()
    result = CurriculumResult(initial, [], log)
    beta, lr = config.beta, config.lr
    for k, stage in enumerate(schedule):
        src, max_steps = stage.source_and_steps()
        trainer = Trainer(net, src, replace(env_config, max_steps=max_steps), replace(config, beta=beta, lr=lr),
                          seed=_stage_seed(seed, k), stage=stage.name)
        if on_stage_start is not None:
            on_stage_start(stage, trainer)
        best, since = -math.inf, 0
        for _ in range(stage.iterations):
            row = trainer.step()
            log.append(row)
            if callback is not None:
                callback(trainer, row)
            r = row["mean_reward"]
            if math.isfinite(r) and r > best:
                best, since = r, 0
            else:
                since += 1
            if patience is not None and since >= patience:
                result.halted = (f"stage {stage.name!r}: no mean-reward improvement in {patience} iterations "
                                 f"(best {best:.4g}) at iteration {trainer.iteration}")
                break
        beta, lr = trainer.beta, trainer.opt.lr
        ckpt = trainer.checkpoint(stage_index=k)
        result.checkpoints.append(ckpt)
        if out_dir is not None:
            save_checkpoint(f"{out_dir}/{stage.name}.ckpt", ckpt)
        if result.halted:
            break
    if out_dir is not None:
        save_checkpoint(f"{out_dir}/final.ckpt", result.final)
        log.write_csv(f"{out_dir}/training_log.csv")
    return result


# ---------------------------------------------------------------- gradient check

def synthetic_batch(cfg, size: int, rng: np.random.Generator, old_net: PolicyNet | None = None) -> RolloutBatch:
    """Random in-range observations, actions and advantages for loss and gradient tests."""
    h, w = cfg.image_shape
    lidar = rng.uniform(0.1, 4.0, (size, cfg.stack, cfg.lidar_beams)) if cfg.uses_lidar else None
    image = rng.uniform(1.4, 5.0, (size, cfg.stack, h, w)) if cfg.uses_camera else None
    goal = np.column_stack([rng.uniform(0.5, 8.0, size), rng.uniform(-np.pi, np.pi, size)])
    vel = np.column_stack([rng.uniform(0.0, 1.0, size), rng.uniform(-1.0, 1.0, size)])
    if old_net is None:
        old_mean, old_log_std = rng.normal(0.0, 0.3, (size, 2)), np.array(cfg.log_std_init)
    else:
        out = old_net.forward(lidar, image, goal, vel)
        old_mean, old_log_std = out.mean.data.copy(), out.log_std.data.copy()
    raw = old_mean + np.exp(old_log_std) * rng.standard_normal((size, 2))
    z = (raw - old_mean) / np.exp(old_log_std)
    logp = np.sum(-0.5 * z * z - old_log_std, axis=1) - math.log(2.0 * math.pi)
    return RolloutBatch(lidar, image, goal, vel, raw, np.array([clamp_action(r) for r in raw]), logp,
                        old_mean, old_log_std, rng.normal(size=size), rng.normal(size=size),
                        np.zeros(size), rng.normal(size=size), rng.normal(size=size))


def grad_check_policy(cfg, seed: int = 0, batch: int = 3, entries: int = 6, h: float = 1e-5):
    """Reverse-mode vs central finite-difference gradients of the full PPO loss.

    The loss is evaluated at a perturbed copy of a random network so the
    ratio, KL, active hinge and value terms all contribute. Every parameter
    tensor is probed on up to ``entries`` seeded entries; probes that cross a
    relu kink are skipped and counted. Returns
    ``(worst_relative_error, per_parameter_errors, skipped_probes)``.
    """
    rng = np.random.default_rng(seed)
    old = PolicyNet(cfg, seed=seed)
    net = old.clone()
    for p in net.parameters():
        p.data = p.data + 0.05 * rng.standard_normal(p.data.shape) * (np.abs(p.data).mean() + 0.01)
    b = synthetic_batch(cfg, batch, rng, old_net=old)
    with np.errstate(all="ignore"):
        kl = mean_kl(net, b)
    kl_target = kl / 4.0  # keeps the hinge active and away from its kink
    return ad.grad_check(lambda: ppo_loss(net, b, 1.0, 50.0, kl_target)[0], net.parameters(),
                         h=h, max_entries=entries, rng=rng)
