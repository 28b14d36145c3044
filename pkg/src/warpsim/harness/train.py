"""Training runs: checkpoints, resume and trajectory dumps."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..engine import RolloutHooks
from ..report import MetricsReport
from ..sampler import sample_actions
from ..tag import TagConfig, TagEnv
from ..trainer import Trainer, episode_reward_baseline

TRAJECTORY_COLUMNS = ("step", "env", "agent", "x", "y", "active", "is_tagger")


def tag_policy_map(config: TagConfig) -> dict[str, list[int]]:
    """One shared policy for the taggers and one for the runners."""
    return {
        "tagger": list(range(config.num_taggers)),
        "runner": list(range(config.num_taggers, config.num_agents)),
    }


def dump_trajectory(trainer: Trainer, config: TagConfig, path: str | Path, seed: int) -> Path:
    """Play one episode in a single fresh environment and write every agent's state per step.

    The environment is not auto-reset, so an episode that ends early keeps its
    terminal positions until ``episode_length`` rows per agent have been written.
    """
    path = Path(path)
    env = TagEnv(config, 1, auto_reset=False)
    store = env.store
    rows = []

    def forward(store, step):
        for a in range(config.num_agents):
            rows.append((step, 0, a, float(store["loc_x"][0, a]), float(store["loc_y"][0, a]),
                         int(store["active"][0, a]), int(store["is_tagger"][0, a])))
        logits, _ = trainer.policy_logits(store["observations"])
        sample_actions(logits, step, seed, out=store["sampled_actions"], engine=env.engine)

    try:
        env.engine.run_rollout(env.plan, store, config.episode_length, RolloutHooks(policy_forward=forward))
    finally:
        env.close()
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        writer.writerows(rows)
    return path


def evaluate(trainer: Trainer, config: TagConfig, num_envs: int, steps: int, seed: int,
             workers: int = 1, uniform_tags: tuple[str, ...] = ()) -> dict[str, list[float]]:
    """Per-tag returns of episodes completed by the current (sampled) policies in fresh envs.

    Tags listed in ``uniform_tags`` act uniformly at random instead of using their policy.
    """
    env = TagEnv(config, num_envs, workers)
    store = env.store
    ret = np.zeros((num_envs, config.num_agents))
    finished: dict[str, list[float]] = {tag: [] for tag in trainer.policy_map}
    uniform_ids = [a for tag in uniform_tags for a in trainer.policy_map[tag]]

    def forward(store, step):
        logits, _ = trainer.policy_logits(store["observations"])
        logits[:, uniform_ids] = 0.0
        sample_actions(logits, step, seed, out=store["sampled_actions"], engine=env.engine)

    def on_reward(store, step):
        ret[:] += store["rewards"]
        for e in np.flatnonzero(store["done"]):
            for tag, ids in trainer.policy_map.items():
                finished[tag].append(float(ret[e, ids].mean()))
            ret[e] = 0.0

    try:
        env.engine.run_rollout(env.plan, store, steps, RolloutHooks(
            policy_forward=forward, on_reward=on_reward,
            done_check=lambda s: env.resets.detect_done(), auto_reset=env.resets,
        ))
    finally:
        env.close()
    return finished


def run_training(run_config, out_dir: str | Path | None = None) -> tuple[MetricsReport, Trainer]:
    """Train per the config, writing metrics, checkpoints and optional trajectories to ``out_dir``."""
    rc = run_config
    out = Path(out_dir or rc.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = rc.env
    env = TagEnv(cfg, rc.engine.num_envs, rc.engine.worker_count)
    trainer = Trainer(env, rc.trainer, tag_policy_map(cfg), cfg.action_space, config_hash=rc.hash())
    if rc.run.resume_from:
        trainer.load(rc.run.resume_from)
    report = MetricsReport.new("train", rc.hash(), rc.trainer.seed, algorithm=rc.trainer.algorithm,
                               num_envs=rc.engine.num_envs, num_agents=cfg.num_agents,
                               workers=rc.engine.worker_count, start_iteration=trainer.iteration)
    remaining = rc.trainer.iterations
    chunk = rc.run.checkpoint_every or remaining
    try:
        while remaining > 0:
            n = min(chunk, remaining)
            trainer.train(n, out_dir=out, report=report)
            remaining -= n
            stem = f"iter{trainer.iteration:06d}"
            trainer.save(out / f"{stem}.ckpt")
            if rc.run.trajectory:
                dump_trajectory(trainer, cfg, out / f"{stem}_trajectory.csv", rc.trainer.seed)
        trainer.save(out / "final.ckpt")
        if rc.run.eval_steps:
            finished = evaluate(trainer, cfg, rc.engine.num_envs, rc.run.eval_steps,
                                rc.trainer.seed + 1, rc.engine.worker_count)
            for tag, eps in finished.items():
                report.meta[f"eval_{tag}_mean_episode_reward"] = float(np.mean(eps)) if eps else float("nan")
                report.meta[f"eval_{tag}_episodes"] = len(eps)
    finally:
        env.close()
    report.write(out, "train")
    return report, trainer


def learning_signal(run_config, seed: int, eval_episodes: int = 3) -> dict:
    """Train from scratch and compare taggers against the seed-matched random baseline.

    Both sides are evaluated in fresh environments with the same placements and
    sampling seed over ``eval_episodes`` episode lengths.  ``trained`` pits the
    trained taggers against the trained runners; ``vs_uniform_runners`` keeps the
    baseline's random runners and swaps in only the trained taggers.
    """
    rc = run_config.with_seed(seed)
    cfg = rc.env
    steps = cfg.episode_length * eval_episodes
    pmap = tag_policy_map(cfg)
    env = TagEnv(cfg, rc.engine.num_envs, rc.engine.worker_count)
    try:
        baseline = episode_reward_baseline(env, pmap, steps, seed, cfg.action_space)
    finally:
        env.close()
    env = TagEnv(cfg, rc.engine.num_envs, rc.engine.worker_count)
    try:
        trainer = Trainer(env, rc.trainer, pmap, cfg.action_space, config_hash=rc.hash())
        report = trainer.train()
    finally:
        env.close()
    trained = evaluate(trainer, cfg, rc.engine.num_envs, steps, seed, rc.engine.worker_count)
    mixed = evaluate(trainer, cfg, rc.engine.num_envs, steps, seed, rc.engine.worker_count,
                     uniform_tags=("runner",))
    base = float(np.mean(baseline["tagger"]))
    out = {
        "seed": seed,
        "iterations": len(report.rows),
        "baseline": base,
        "trained": float(np.mean(trained["tagger"])),
        "vs_uniform_runners": float(np.mean(mixed["tagger"])),
        "runner_trained": float(np.mean(trained["runner"])),
        "runner_baseline": float(np.mean(baseline["runner"])),
        "curve": report.column("tagger_mean_episode_reward"),
    }
    out["ratio"] = out["trained"] / base
    out["ratio_vs_uniform_runners"] = out["vs_uniform_runners"] / base
    return out
