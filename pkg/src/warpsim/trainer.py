"""On-policy training (A2C, PPO-clip) straight off the DataStore."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import policy as pm
from .engine import RolloutHooks
from .report import MetricsReport
from .sampler import sample_actions

A2C = "a2c"
PPO = "ppo"


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    rollout_horizon: int = 100
    learning_rate: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    algorithm: str = A2C
    ppo_clip: float = 0.2
    ppo_epochs: int = 4
    max_grad_norm: float = 0.5
    iterations: int = 10
    seed: int = 0
    hidden_sizes: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.rollout_horizon < 1:
            raise ValueError("rollout_horizon must be >= 1")
        if self.ppo_clip <= 0:
            raise ValueError("ppo_clip must be > 0")
        if self.algorithm not in (A2C, PPO):
            raise ValueError(f"algorithm must be a2c|ppo, got {self.algorithm!r}")
        if self.iterations < 0 or self.ppo_epochs < 1:
            raise ValueError("iterations must be >= 0 and ppo_epochs >= 1")


# -- returns and losses --------------------------------------------------------


def compute_returns(rewards: np.ndarray, dones: np.ndarray, bootstrap: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted returns over axis 0, cut at ``dones`` and bootstrapped at the end.

    ``dones[t]`` marks step t as the last of its episode; ``bootstrap`` is the
    value estimate of the observation that follows the final step.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    out = np.empty_like(rewards)
    running = np.asarray(bootstrap, dtype=np.float64) * np.ones(rewards.shape[1:])
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = rewards[t] + gamma * np.where(dones[t], 0.0, running)
        out[t] = running
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def action_log_prob(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Summed per-category log-probabilities. logits [M, C, K], actions [M, C]."""
    lp = log_softmax(logits)
    picked = np.take_along_axis(lp, actions[..., None].astype(np.int64), axis=-1)[..., 0]
    return picked.sum(axis=-1)


def _policy_terms(logits, actions):
    lp = log_softmax(logits)
    p = np.exp(lp)
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, actions[..., None].astype(np.int64), 1.0, axis=-1)
    logp = (lp * onehot).sum(axis=(-1, -2))
    ent_c = -(p * lp).sum(axis=-1)  # [M, C]
    # d logp / d logits and d H / d logits
    dlogp = onehot - p
    dent = -p * (lp + ent_c[..., None])
    return logp, ent_c, dlogp, dent


@dataclass
class LossResult:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    grads: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def _finish(params, cache, values, returns, mask, ent_c, dlogp, dent, pg_per_row, dpg_dlogp,
            value_coef, entropy_coef):
    mask = mask.astype(np.float64)
    count = max(mask.sum(), 1.0)
    w = mask / count
    ent = ent_c.sum(axis=-1)
    v_err = values - returns
    policy_loss = float((w * pg_per_row).sum())
    value_loss = float((w * v_err ** 2).sum())
    entropy = float((w * ent).sum())
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    dlogits = (w * dpg_dlogp)[:, None, None] * dlogp - entropy_coef * w[:, None, None] * dent
    dvalues = 2.0 * value_coef * w * v_err
    grads = pm.backward(params, cache, dlogits, dvalues)
    return LossResult(loss, policy_loss, value_loss, entropy, grads)


def a2c_loss(
    params: pm.PolicyParams,
    obs: np.ndarray,
    actions: np.ndarray,
    returns: np.ndarray,
    mask: np.ndarray | None = None,
    value_coef: float = 0.5,
    entropy_coef: float = 0.01,
) -> LossResult:
    """mean over active rows of -logpi*A + c_v (V-R)^2 - c_e H, with A = R - V held fixed."""
    logits, values, cache = pm.forward(params, obs, return_cache=True)
    mask = np.ones(len(obs), bool) if mask is None else np.asarray(mask, bool)
    logp, ent_c, dlogp, dent = _policy_terms(logits, actions)
    adv = returns - values
    return _finish(params, cache, values, returns, mask, ent_c, dlogp, dent,
                   -logp * adv, -adv, value_coef, entropy_coef)


def normalize_advantages(adv: np.ndarray, mask: np.ndarray) -> np.ndarray:
    m = mask.astype(bool)
    if m.sum() < 2:
        return adv
    mean = adv[m].mean()
    std = adv[m].std()
    return (adv - mean) / (std + 1e-8)


def ppo_loss(
    params: pm.PolicyParams,
    obs: np.ndarray,
    actions: np.ndarray,
    returns: np.ndarray,
    old_logp: np.ndarray,
    advantages: np.ndarray,
    mask: np.ndarray | None = None,
    clip: float = 0.2,
    value_coef: float = 0.5,
    entropy_coef: float = 0.01,
) -> LossResult:
    """Clipped surrogate -min(rho*A, clip(rho)*A) plus value and entropy terms.

    ``advantages`` are taken as given (normalize them beforehand if wanted).
    """
    logits, values, cache = pm.forward(params, obs, return_cache=True)
    mask = np.ones(len(obs), bool) if mask is None else np.asarray(mask, bool)
    logp, ent_c, dlogp, dent = _policy_terms(logits, actions)
    ratio = np.exp(logp - old_logp)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    use_unclipped = unclipped <= clipped
    surrogate = np.where(use_unclipped, unclipped, clipped)
    # only the unclipped branch depends on the parameters
    dsur_dlogp = np.where(use_unclipped, unclipped, 0.0)
    return _finish(params, cache, values, returns, mask, ent_c, dlogp, dent,
                   -surrogate, -dsur_dlogp, value_coef, entropy_coef)


# -- optimizer ------------------------------------------------------------------


class Adam:
    def __init__(self, params: pm.PolicyParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def step(self, params: pm.PolicyParams, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params.arrays[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}/t": np.array([float(self.t)])}
        out.update({f"{prefix}/m/{k}": v for k, v in self.m.items()})
        out.update({f"{prefix}/v/{k}": v for k, v in self.v.items()})
        return out

    def load(self, prefix: str, arrays: Mapping[str, np.ndarray]) -> None:
        self.t = int(arrays[f"{prefix}/t"][0])
        for k in self.m:
            self.m[k] = arrays[f"{prefix}/m/{k}"].copy()
            self.v[k] = arrays[f"{prefix}/v/{k}"].copy()


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


# -- rollouts -------------------------------------------------------------------


@dataclass
class RolloutBatch:
    obs: np.ndarray  # [T, E, N, D]
    actions: np.ndarray  # [T, E, N, C]
    rewards: np.ndarray  # [T, E, N]
    done: np.ndarray  # [T, E]
    terminal: np.ndarray  # [T, E, N] episode over for that agent after step t
    values: np.ndarray  # [T, E, N]
    logp: np.ndarray  # [T, E, N]
    active: np.ndarray  # [T, E, N] agent acted at step t

    @classmethod
    def empty(cls, horizon, num_envs, num_agents, obs_dim, num_categories):
        t, e, n = horizon, num_envs, num_agents
        return cls(
            obs=np.zeros((t, e, n, obs_dim), np.float32),
            actions=np.zeros((t, e, n, num_categories), np.int32),
            rewards=np.zeros((t, e, n), np.float32),
            done=np.zeros((t, e), bool),
            terminal=np.zeros((t, e, n), bool),
            values=np.zeros((t, e, n)),
            logp=np.zeros((t, e, n)),
            active=np.ones((t, e, n), bool),
        )


class Trainer:
    """Collects rollouts through the engine and updates one policy per tag.

    ``env`` is anything exposing ``store``, ``plan``, ``engine`` and ``resets``
    (``TagEnv`` does).  ``action_space`` is (categories, choices).
    """

    def __init__(
        self,
        env,
        config: TrainerConfig,
        policy_map: Mapping[str, Sequence[int]],
        action_space: tuple[int, int],
        policies: Mapping[str, pm.PolicyParams] | None = None,
        config_hash: str = "",
    ):
        self.env = env
        self.config = config
        self.store = env.store
        self.policy_map = pm.make_policy_map(policy_map, self.store.num_agents)
        self.num_categories, self.num_choices = action_space
        obs_dim = self.store["observations"].shape[-1]
        if policies is None:
            policies = {
                tag: pm.init(config.seed + i, obs_dim, self.num_categories, self.num_choices, config.hidden_sizes)
                for i, tag in enumerate(self.policy_map)
            }
        self.policies = dict(policies)
        self.optimizers = {tag: Adam(p, config.learning_rate) for tag, p in self.policies.items()}
        self.iteration = 0
        self.step = 0
        self.config_hash = config_hash
        e, n = self.store.num_envs, self.store.num_agents
        self._logits = np.zeros((e, n, self.num_categories, self.num_choices))
        self._ep_return = np.zeros((e, n))
        self._finished: dict[str, list[float]] = {tag: [] for tag in self.policy_map}
        self.batch = RolloutBatch.empty(config.rollout_horizon, e, n, obs_dim, self.num_categories)

    # -- rollout ----------------------------------------------------------

    def policy_logits(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Logits [E, N, C, K] and values [E, N] for a full observation tensor."""
        e, n, d = obs.shape
        logits = np.empty((e, n, self.num_categories, self.num_choices))
        values = np.empty((e, n))
        for tag, ids in self.policy_map.items():
            rows = obs[:, ids].reshape(-1, d)
            lg, v = pm.forward(self.policies[tag], rows)
            logits[:, ids] = lg.reshape(e, len(ids), self.num_categories, self.num_choices)
            values[:, ids] = v.reshape(e, len(ids))
        return logits, values

    def _hooks(self, start: int) -> RolloutHooks:
        b = self.batch
        store = self.store
        has_active = "active" in store

        def forward(store, step):
            t = step - start
            obs = store["observations"]
            b.obs[t] = obs
            if has_active:
                b.active[t] = store["active"]
            self._logits[:], b.values[t] = self.policy_logits(obs)

        def sample(store, step):
            t = step - start
            acts = sample_actions(self._logits, step, self.config.seed, out=store["sampled_actions"],
                                  engine=self.env.engine)
            b.actions[t] = acts
            flat = self._logits.reshape(-1, self.num_categories, self.num_choices)
            b.logp[t] = action_log_prob(flat, acts.reshape(-1, self.num_categories)).reshape(acts.shape[:2])

        def on_reward(store, step):
            t = step - start
            b.rewards[t] = store["rewards"]
            b.done[t] = store["done"]
            b.terminal[t] = b.done[t][:, None]
            if has_active:
                b.terminal[t] |= b.active[t] & ~store["active"]
            self._ep_return += store["rewards"]
            for e in np.flatnonzero(b.done[t]):
                for tag, ids in self.policy_map.items():
                    self._finished[tag].append(float(self._ep_return[e, ids].mean()))
                self._ep_return[e] = 0.0

        resets = self.env.resets
        return RolloutHooks(
            policy_forward=forward,
            sample=sample,
            on_reward=on_reward,
            done_check=lambda store: resets.detect_done(),
            auto_reset=resets,
        )

    def collect(self) -> float:
        """One rollout of ``rollout_horizon`` steps; returns its wall time."""
        start = self.step
        t0 = time.perf_counter()
        self.step = self.env.engine.run_rollout(
            self.env.plan, self.store, self.config.rollout_horizon, self._hooks(start), start_step=start
        )
        return time.perf_counter() - t0

    # -- update -----------------------------------------------------------

    def _tag_rows(self, tag: str, bootstrap: np.ndarray):
        b = self.batch
        ids = self.policy_map[tag]
        rewards = b.rewards[:, :, ids]
        returns = compute_returns(rewards, b.terminal[:, :, ids], bootstrap[:, ids], self.config.gamma)
        d = b.obs.shape[-1]
        return (
            b.obs[:, :, ids].reshape(-1, d),
            b.actions[:, :, ids].reshape(-1, self.num_categories),
            returns.reshape(-1),
            b.active[:, :, ids].reshape(-1),
            b.logp[:, :, ids].reshape(-1),
            b.values[:, :, ids].reshape(-1),
        )

    def update(self) -> dict[str, LossResult]:
        cfg = self.config
        results = {}
        _, bootstrap = self.policy_logits(self.store["observations"])
        for tag in self.policy_map:
            obs, actions, returns, mask, old_logp, old_values = self._tag_rows(tag, bootstrap)
            params = self.policies[tag]
            if cfg.algorithm == A2C:
                passes = 1
            else:
                passes = cfg.ppo_epochs
                adv = normalize_advantages(returns - old_values, mask)
            for _ in range(passes):
                if cfg.algorithm == A2C:
                    res = a2c_loss(params, obs, actions, returns, mask, cfg.value_coef, cfg.entropy_coef)
                else:
                    res = ppo_loss(params, obs, actions, returns, old_logp, adv, mask, cfg.ppo_clip,
                                   cfg.value_coef, cfg.entropy_coef)
                clip_grad_norm(res.grads, cfg.max_grad_norm)
                self.optimizers[tag].step(params, res.grads)
            results[tag] = res
        return results

    # -- loop -------------------------------------------------------------

    def train(self, iterations: int | None = None, out_dir: str | Path | None = None,
              report: MetricsReport | None = None) -> MetricsReport:
        iterations = self.config.iterations if iterations is None else iterations
        report = report or MetricsReport.new("train", self.config_hash, self.config.seed,
                                             algorithm=self.config.algorithm,
                                             num_envs=self.store.num_envs,
                                             num_agents=self.store.num_agents)
        horizon = self.config.rollout_horizon
        for _ in range(iterations):
            t0 = time.perf_counter()
            for tag in self._finished:
                self._finished[tag] = []
            rollout_s = self.collect()
            try:
                results = self.update()
            except FloatingPointError as exc:
                ckpt = None
                if out_dir is not None:
                    ckpt = self.save(Path(out_dir) / "diverged.ckpt")
                raise TrainingDiverged(f"iteration {self.iteration}: {exc}", ckpt) from exc
            wall = time.perf_counter() - t0
            row = {
                "iteration": self.iteration,
                "wall_ms": wall * 1e3,
                "steps_per_sec": horizon * self.store.num_envs / rollout_s,
            }
            for tag, res in results.items():
                eps = self._finished[tag]
                row[f"{tag}_mean_episode_reward"] = float(np.mean(eps)) if eps else float("nan")
                row[f"{tag}_episodes"] = len(eps)
                row[f"{tag}_loss"] = res.loss
                row[f"{tag}_policy_loss"] = res.policy_loss
                row[f"{tag}_value_loss"] = res.value_loss
                row[f"{tag}_entropy"] = res.entropy
            report.add(**row)
            self.iteration += 1
        return report

    # -- checkpoints ------------------------------------------------------

    def save(self, path: str | Path) -> Path:
        extra = {}
        for tag, opt in self.optimizers.items():
            extra.update(opt.state(f"adam/{tag}"))
        meta = {"iteration": self.iteration, "step": self.step, "seed": self.config.seed,
                "config_hash": self.config_hash, "algorithm": self.config.algorithm}
        return pm.save_checkpoint(path, self.policies, meta, extra)

    def load(self, path: str | Path) -> dict:
        policies, meta, extra = pm.load_checkpoint(path)
        if set(policies) != set(self.policy_map):
            raise ValueError(f"checkpoint tags {sorted(policies)} != {sorted(self.policy_map)}")
        self.policies = policies
        for tag, params in policies.items():
            opt = Adam(params, self.config.learning_rate)
            if f"adam/{tag}/t" in extra:
                opt.load(f"adam/{tag}", extra)
            self.optimizers[tag] = opt
        self.iteration = int(meta["iteration"])
        self.step = int(meta["step"])
        return meta


def episode_reward_baseline(env, policy_map: Mapping[str, Sequence[int]], steps: int, seed: int,
                            action_space: tuple[int, int]) -> dict[str, list[float]]:
    """Per-tag episode rewards under the uniform random policy."""
    c, k = action_space
    store = env.store
    logits = np.zeros((store.num_envs, store.num_agents, c, k))
    ep_return = np.zeros((store.num_envs, store.num_agents))
    finished: dict[str, list[float]] = {tag: [] for tag in policy_map}

    def sample(store, step):
        sample_actions(logits, step, seed, out=store["sampled_actions"], engine=env.engine)

    def on_reward(store, step):
        ep_return[:] += store["rewards"]
        for e in np.flatnonzero(store["done"]):
            for tag, ids in policy_map.items():
                finished[tag].append(float(ep_return[e, list(ids)].mean()))
            ep_return[e] = 0.0

    env.engine.run_rollout(env.plan, store, steps, RolloutHooks(
        sample=sample, on_reward=on_reward,
        done_check=lambda s: env.resets.detect_done(), auto_reset=env.resets,
    ))
    return finished
