"""Throughput benchmarks: environment-count scaling and agent-count scaling.

Every measurement follows the same protocol: one warm-up run that also
calibrates how many steps fit in ``bench_seconds``, then ``repetitions``
timed runs of that many steps on a monotonic clock.  The median is reported.
"""

from __future__ import annotations

import dataclasses
import statistics
import time

import numpy as np

from ..engine import RolloutHooks
from ..report import MetricsReport
from ..sampler import sample_actions
from ..tag import TagConfig, TagEnv
from ..trainer import Trainer
from .train import tag_policy_map


def _random_hooks(env: TagEnv, seed: int) -> RolloutHooks:
    c, k = env.config.action_space
    logits = np.zeros((env.num_envs, env.config.num_agents, c, k))

    def sample(store, step):
        sample_actions(logits, step, seed, out=store["sampled_actions"], engine=env.engine)

    return RolloutHooks(sample=sample, done_check=lambda s: env.resets.detect_done(),
                        auto_reset=env.resets)


def time_rollout(env: TagEnv, seconds: float, repetitions: int, seed: int = 0) -> dict:
    """Median wall time of a random-policy rollout; steps calibrated during warm-up."""
    hooks = _random_hooks(env, seed)
    step = 0
    steps = 1
    # warm-up doubles the step count until the budget is reached (also compiles kernels)
    while True:
        t0 = time.perf_counter()
        step = env.engine.run_rollout(env.plan, env.store, steps, hooks, start_step=step)
        elapsed = time.perf_counter() - t0
        if elapsed >= seconds / 4 or steps >= 1 << 16:
            break
        steps *= 2
    steps = max(1, int(steps * seconds / max(elapsed, 1e-9)))
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        step = env.engine.run_rollout(env.plan, env.store, steps, hooks, start_step=step)
        times.append(time.perf_counter() - t0)
    median = statistics.median(times)
    return {"steps": steps, "seconds": median, "times": times,
            "steps_per_sec": steps * env.num_envs / median}


def train_steps_per_sec(config: TagConfig, num_envs: int, run_config, workers: int) -> float:
    """Median env-steps/sec of whole training iterations (rollout plus update)."""
    trainer_cfg = run_config.trainer
    env = TagEnv(config, num_envs, workers)
    try:
        trainer = Trainer(env, trainer_cfg, tag_policy_map(config), config.action_space)
        trainer.train(1)  # warm-up
        per_iter = []
        for _ in range(run_config.run.bench_train_iterations):
            t0 = time.perf_counter()
            trainer.train(1)
            per_iter.append(time.perf_counter() - t0)
        return trainer_cfg.rollout_horizon * num_envs / statistics.median(per_iter)
    finally:
        env.close()


def bench_envs(run_config, report: MetricsReport | None = None, train: bool = True) -> MetricsReport:
    """Steps/sec against the number of concurrent environments."""
    rc = run_config
    cfg = rc.env
    workers = rc.engine.worker_count
    report = report or MetricsReport.new("bench-envs", rc.hash(), cfg.seed, workers=workers,
                                         num_agents=cfg.num_agents, variant=cfg.variant,
                                         repetitions=rc.run.repetitions)
    for count in rc.run.env_counts:
        try:
            env = TagEnv(cfg, count, workers)
            try:
                res = time_rollout(env, rc.run.bench_seconds, rc.run.repetitions, cfg.seed)
            finally:
                env.close()
            row = {"num_envs": count, "ok": True, "steps": res["steps"],
                   "median_seconds": res["seconds"], "steps_per_sec": res["steps_per_sec"]}
            if train:
                sps = train_steps_per_sec(cfg, count, rc, workers)
                row["train_steps_per_sec"] = sps
                row["train_iterations_per_sec"] = sps / (rc.trainer.rollout_horizon * count)
        except MemoryError as exc:
            row = {"num_envs": count, "ok": False, "error": f"MemoryError: {exc}"}
        report.add(**row)
    ok = [r for r in report.rows if r["ok"]]
    if ok:
        base = ok[0]["steps_per_sec"]
        for row in ok:
            row["speedup"] = row["steps_per_sec"] / base
    return report


def agent_config(config: TagConfig, num_agents: int, obs_mode: str) -> TagConfig:
    """Same tagger fraction as ``config`` (at least one of each role) with ``num_agents`` agents.

    ``k_nearest`` is capped so tiny populations stay valid.
    """
    taggers = int(round(num_agents * config.num_taggers / config.num_agents))
    taggers = min(max(taggers, 1), num_agents - 1)
    return dataclasses.replace(config, num_taggers=taggers, num_runners=num_agents - taggers,
                               obs_mode=obs_mode, k_nearest=min(config.k_nearest, num_agents - 1))


def envs_for_agents(num_agents: int, budget: int = 2000) -> int:
    """More environments for small populations so each timing covers similar work."""
    return max(1, budget // num_agents)


def log_log_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def bench_agents(run_config, report: MetricsReport | None = None) -> MetricsReport:
    """Per-environment step time against the number of agents, per observation mode."""
    rc = run_config
    workers = rc.engine.worker_count
    report = report or MetricsReport.new("bench-agents", rc.hash(), rc.env.seed, workers=workers,
                                         variant=rc.env.variant, repetitions=rc.run.repetitions)
    slopes = {}
    for mode in rc.run.obs_modes:
        times = []
        for n in rc.run.agent_counts:
            cfg = agent_config(rc.env, n, mode)
            num_envs = envs_for_agents(n)
            try:
                env = TagEnv(cfg, num_envs, workers)
                try:
                    res = time_rollout(env, rc.run.bench_seconds, rc.run.repetitions, cfg.seed)
                finally:
                    env.close()
            except MemoryError as exc:
                report.add(obs_mode=mode, num_agents=n, num_envs=num_envs, ok=False,
                           error=f"MemoryError: {exc}")
                times.append(float("nan"))
                continue
            per_env = res["seconds"] / (res["steps"] * num_envs)
            times.append(per_env)
            report.add(obs_mode=mode, num_agents=n, num_envs=num_envs, ok=True, steps=res["steps"],
                       median_seconds=res["seconds"], per_env_step_seconds=per_env,
                       obs_dim=cfg.obs_dim)
        good = [(n, t) for n, t in zip(rc.run.agent_counts, times) if np.isfinite(t)]
        slopes[mode] = log_log_slope(*zip(*good)) if len(good) >= 2 else float("nan")
    report.meta["slopes"] = slopes
    return report
