"""Run the parallel engine and the sequential reference in lockstep."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .. import policy as pm
from ..report import MetricsReport
from ..sampler import sample_actions
from ..tag import TagConfig, TagEnv, TagReference

# causal order inside one step: action -> reward -> done -> next observation
COMPARE_ORDER = ("sampled_actions", "rewards", "done", "observations")


@dataclass
class Divergence:
    step: int
    env: int
    agent: int | None
    array: str
    index: tuple[int, ...]
    engine_value: float
    reference_value: float


def first_difference(name: str, got: np.ndarray, want: np.ndarray, step: int) -> Divergence | None:
    if got.shape == want.shape and got.dtype == want.dtype and got.tobytes() == want.tobytes():
        return None
    if got.shape != want.shape:
        return Divergence(step, 0, None, name, (), float("nan"), float("nan"))
    diff = np.flatnonzero(got.reshape(-1).view(np.uint8 if got.dtype == np.bool_ else got.dtype)
                          != want.reshape(-1).view(np.uint8 if want.dtype == np.bool_ else want.dtype))
    if diff.size == 0:  # e.g. -0.0 vs 0.0 differ in bytes only
        diff = np.flatnonzero(got.reshape(-1).tobytes() != want.reshape(-1).tobytes())
    coords = np.unravel_index(int(diff[0]), got.shape)
    env = int(coords[0])
    agent = int(coords[1]) if len(coords) > 1 else None
    rest = tuple(int(c) for c in coords[2:])
    return Divergence(step, env, agent, name, rest, float(got[coords]), float(want[coords]))


def _policy(config: TagConfig, seed: int) -> pm.PolicyParams:
    c, k = config.action_space
    return pm.init(seed, config.obs_dim, c, k, (32, 32))


def _logits(params, obs: np.ndarray, config: TagConfig) -> np.ndarray:
    e, n, d = obs.shape
    c, k = config.action_space
    lg, _ = pm.forward(params, obs.reshape(-1, d))
    return lg.reshape(e, n, c, k)


def reference_trace(config: TagConfig, num_envs: int, steps: int, sample_seed: int | None = None) -> list[dict]:
    """Record the sequential reference: initial observations, then one entry per step."""
    seed = config.seed if sample_seed is None else sample_seed
    ref = TagReference(config, num_envs)
    params = _policy(config, seed)
    trace = [{"observations": ref.obs.copy()}]
    for t in range(steps):
        actions = ref.sample(_logits(params, ref.obs, config), t, seed)
        _, rewards, done = ref.step(actions)
        entry = {"sampled_actions": actions, "rewards": rewards.copy(), "done": done,
                 "tags": len(ref.tag_log)}
        ref.auto_reset()
        entry["observations"] = ref.obs.copy()
        trace.append(entry)
    return trace


def check_consistency(
    config: TagConfig,
    num_envs: int,
    steps: int,
    worker_count: int = 1,
    sample_seed: int | None = None,
    radius_offset: float = 0.0,
    trace: list[dict] | None = None,
) -> tuple[Divergence | None, dict]:
    """Engine vs reference, step by step; returns the first divergence (or None) and stats.

    ``radius_offset`` perturbs the engine side only, for mutation tests.
    """
    seed = config.seed if sample_seed is None else sample_seed
    if trace is None or len(trace) < steps + 1:
        trace = reference_trace(config, num_envs, steps, seed)
    env = TagEnv(config, num_envs, worker_count, radius_offset=radius_offset)
    params = _policy(config, seed)
    store = env.store
    stats = {"episodes": 0, "tags": 0}
    try:
        div = first_difference("observations", store["observations"], trace[0]["observations"], -1)
        if div:
            return div, stats
        for t in range(steps):
            want = trace[t + 1]
            logits = _logits(params, store["observations"], config)
            sample_actions(logits, t, seed, out=store["sampled_actions"], engine=env.engine)
            env.engine.run_step(env.plan, store, t)
            got = {
                "sampled_actions": store["sampled_actions"].copy(),
                "rewards": store["rewards"].copy(),
                "done": store["done"].copy(),
            }
            stats["tags"] += int(store["tagged"].sum())
            ids = env.resets.detect_done()
            env.resets.auto_reset(ids)
            stats["episodes"] += int(ids.size)
            got["observations"] = store["observations"]
            for name in COMPARE_ORDER:
                div = first_difference(name, got[name], want[name], t)
                if div:
                    return div, stats
        return None, stats
    finally:
        env.close()


def resolve_workers(spec, cores: int) -> int:
    return cores if spec == "max" else int(spec)


def run_check(run_config, report: MetricsReport | None = None, cores: int | None = None,
              radius_offset: float = 0.0) -> MetricsReport:
    """Every (variant, obs mode, worker count) of the run section."""
    from ..report import core_count

    cores = cores or core_count()
    rc = run_config
    report = report or MetricsReport.new("check", rc.hash(), rc.env.seed, num_envs=rc.engine.num_envs,
                                         num_agents=rc.env.num_agents, steps=rc.run.check_steps)
    for variant in rc.run.check_variants:
        for mode in rc.run.check_obs_modes:
            cfg = dataclasses.replace(rc.env, variant=variant, obs_mode=mode)
            workers = []
            for w in rc.run.check_workers:
                w = resolve_workers(w, cores)
                if w not in workers:
                    workers.append(w)
            t0 = time.perf_counter()
            trace = reference_trace(cfg, rc.engine.num_envs, rc.run.check_steps)
            ref_seconds = time.perf_counter() - t0
            for w in workers:
                t0 = time.perf_counter()
                div, stats = check_consistency(cfg, rc.engine.num_envs, rc.run.check_steps, w,
                                               radius_offset=radius_offset, trace=trace)
                row = {
                    "variant": variant, "obs_mode": mode, "workers": w,
                    "passed": div is None, "steps": rc.run.check_steps,
                    "episodes": stats["episodes"], "tags": stats["tags"],
                    "seconds": time.perf_counter() - t0, "reference_seconds": ref_seconds,
                }
                if div is not None:
                    row.update(div_step=div.step, div_env=div.env,
                               div_agent=-1 if div.agent is None else div.agent,
                               div_array=div.array, div_index=",".join(map(str, div.index)))
                report.add(**row)
    report.meta["passed"] = all(r["passed"] for r in report.rows)
    return report
