"""Tag as a three-phase plan over a DataStore.

Agents ``0 .. num_taggers-1`` are taggers, the rest are runners.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import data_store as ds
from ..data_store import ArraySpec, DataStore
from ..engine import ENV, PER_AGENT, PER_ENV, EngineConfig, Phase, PhasePlan, StepEngine, Write
from ..reset import ResetManager, ResetPolicy
from ..rng import MASK64, PLACEMENT_SALT, derive_seed
from . import kernels as K
from .config import TagConfig

ZERO_ON_RESET = ("rewards", "step_count", "done", "stepped", "tag_credits", "tagged")


def bucket_side(config: TagConfig, population: int) -> int:
    """Cells per side of the spatial hash, about two agents per cell."""
    limit = config.grid_size if not config.continuous else max(1, int(config.world_length))
    return int(min(max(1, int(math.sqrt(population / 2))), limit))


def tagger_side(config: TagConfig) -> int:
    side = bucket_side(config, config.num_taggers)
    if config.radius > 0:
        side = min(side, max(1, int(config.world_size / config.radius)))
    return side


@dataclass
class TagLayout:
    config: TagConfig
    radius: float
    tag_side: int
    obs_side: int
    placement_seed: int

    @property
    def tag_inv_h(self) -> float:
        return self.tag_side / self.config.world_size

    @property
    def obs_inv_h(self) -> float:
        return self.obs_side / self.config.world_size


def _arrays(store: DataStore):
    return {name: store[name] for name in store.names()}


def initial_state(config: TagConfig, num_envs: int) -> dict[str, np.ndarray]:
    n = config.num_agents
    is_tagger = np.zeros((num_envs, n), dtype=np.bool_)
    is_tagger[:, : config.num_taggers] = True
    state = {
        "loc_x": np.zeros((num_envs, n), dtype=np.float32),
        "loc_y": np.zeros((num_envs, n), dtype=np.float32),
        "speed": np.zeros((num_envs, n), dtype=np.float32),
        "direction": np.zeros((num_envs, n), dtype=np.float32),
        "is_tagger": is_tagger,
        "active": np.ones((num_envs, n), dtype=np.bool_),
        "episode": np.zeros(num_envs, dtype=np.int32),
    }
    seed = derive_seed(config.seed, PLACEMENT_SALT)
    K.place_kernel(
        np.arange(num_envs, dtype=np.int64), state["episode"], np.uint64(seed),
        state["loc_x"], state["loc_y"], state["direction"], config.continuous,
        config.grid_size, float(config.world_length),
    )
    return state


def build_plan(
    config: TagConfig, store: DataStore, radius_offset: float = 0.0
) -> tuple[PhasePlan, TagLayout]:
    """Register every Tag array in ``store`` and return the step plan.

    ``radius_offset`` widens the tag radius; it exists only so tests can
    inject a fault the consistency checker must catch.
    """
    if store.num_agents != config.num_agents:
        raise ValueError(f"store has {store.num_agents} agents, config {config.num_agents}")
    e, n = store.num_envs, config.num_agents
    cats, _ = config.action_space
    state = initial_state(config, e)
    layout = TagLayout(
        config=config,
        radius=config.radius + radius_offset,
        tag_side=tagger_side(config),
        obs_side=bucket_side(config, n),
        placement_seed=derive_seed(config.seed, PLACEMENT_SALT),
    )

    reg = store.register_array
    reg(ds.spec("loc_x", (e, n), ds.REAL, True), state["loc_x"])
    reg(ds.spec("loc_y", (e, n), ds.REAL, True), state["loc_y"])
    if config.continuous:
        reg(ds.spec("speed", (e, n), ds.REAL, True), state["speed"])
        reg(ds.spec("direction", (e, n), ds.REAL, True), state["direction"])
    reg(ds.spec("is_tagger", (e, n), ds.BOOLEAN, True), state["is_tagger"])
    reg(ds.spec("active", (e, n), ds.BOOLEAN, True), state["active"])
    reg(ds.spec("episode", (e,), ds.INTEGER), state["episode"])
    reg(ds.spec("step_count", (e,), ds.INTEGER))
    reg(ds.spec("stepped", (e,), ds.BOOLEAN))
    reg(ds.spec("tag_credits", (e, n), ds.INTEGER))
    reg(ds.spec("tagged", (e, n), ds.BOOLEAN))
    reg(ds.spec("observations", (e, n, config.obs_dim), ds.REAL), _initial_obs(config, layout, state, e))
    reg(ds.spec("sampled_actions", (e, n, cats), ds.INTEGER), np.ones((e, n, cats)) if config.continuous else None)
    reg(ds.spec("rewards", (e, n), ds.REAL))
    reg(ds.spec("done", (e,), ds.BOOLEAN))

    plan = PhasePlan(
        [
            Phase("move", PER_AGENT, _move_kernel(config), _move_writes(config)),
            Phase(
                "resolve_tags", PER_ENV, _resolve_kernel(config, layout),
                tuple(Write(a, ENV) for a in ("active", "tag_credits", "tagged", "step_count", "done", "stepped")),
            ),
            Phase("observe_reward", PER_AGENT, _observe_kernel(config, layout),
                  (Write("observations"), Write("rewards"))),
        ],
        name=f"tag-{config.variant}-{config.obs_mode}",
    )
    return plan, layout


def _initial_obs(config, layout, state, num_envs):
    obs = np.zeros((num_envs, config.num_agents, config.obs_dim), dtype=np.float32)
    zeros_i = np.zeros((num_envs, config.num_agents), dtype=np.int32)
    zeros_b = np.zeros((num_envs, config.num_agents), dtype=np.bool_)
    _observe(config, layout, np.arange(num_envs, dtype=np.int64), False, np.zeros(num_envs, np.bool_),
             obs, np.zeros((num_envs, config.num_agents), np.float32), state["loc_x"], state["loc_y"],
             state["is_tagger"], state["active"], state["speed"], state["direction"],
             np.zeros(num_envs, np.int32), zeros_i, zeros_b)
    return obs


def _observe(config, layout, env_ids, only_stepped, stepped, obs, rewards, loc_x, loc_y, is_tagger,
             active, speed, direction, step_count, tag_credits, tagged):
    return K.observe_reward_kernel(
        env_ids, only_stepped, stepped, obs, rewards, loc_x, loc_y, is_tagger, active, speed,
        direction, step_count, tag_credits, tagged, config.continuous, config.obs_mode == "partial",
        config.k_nearest, config.world_size, float(config.episode_length),
        float(config.max_speed_tagger), float(config.max_speed_runner), float(config.tag_reward),
        float(config.tagged_penalty), layout.obs_side, layout.obs_inv_h,
    )


def _motion(store: DataStore):
    if "speed" in store:
        return store["speed"], store["direction"]
    # discrete Tag has no motion state; kernels still take the arguments
    shape = (store.num_envs, store.num_agents)
    return np.zeros(shape, np.float32), np.zeros(shape, np.float32)


def _move_writes(config):
    names = ["loc_x", "loc_y"] + (["speed", "direction"] if config.continuous else [])
    return tuple(Write(name) for name in names)


def _move_kernel(config: TagConfig):
    if config.continuous:
        def kernel(store, env_ids, step):
            return K.move_continuous_kernel(
                env_ids, store["done"], store["active"], store["is_tagger"], store["sampled_actions"],
                store["loc_x"], store["loc_y"], store["speed"], store["direction"],
                float(config.max_speed_tagger), float(config.max_speed_runner),
                float(config.accel_delta), float(config.turn_delta), float(config.world_length),
            )
    else:
        def kernel(store, env_ids, step):
            return K.move_discrete_kernel(
                env_ids, store["done"], store["active"], store["sampled_actions"],
                store["loc_x"], store["loc_y"], config.grid_size,
            )
    return kernel


def _resolve_kernel(config: TagConfig, layout: TagLayout):
    def kernel(store, env_ids, step):
        return K.resolve_tags_kernel(
            env_ids, store["done"], store["stepped"], store["active"], store["is_tagger"],
            store["loc_x"], store["loc_y"], store["step_count"], store["tag_credits"],
            store["tagged"], config.episode_length, layout.radius, layout.tag_side, layout.tag_inv_h,
        )
    return kernel


def _observe_kernel(config: TagConfig, layout: TagLayout):
    motion_cache = {}

    def kernel(store, env_ids, step):
        if "speed" not in motion_cache:
            motion_cache["speed"] = _motion(store)
        speed, direction = motion_cache["speed"]
        return _observe(
            config, layout, env_ids, True, store["stepped"], store["observations"], store["rewards"],
            store["loc_x"], store["loc_y"], store["is_tagger"], store["active"], speed, direction,
            store["step_count"], store["tag_credits"], store["tagged"],
        )
    return kernel


def reinit(config: TagConfig, layout: TagLayout):
    """Reset hook: fresh placement from the episode counter, then observations."""
    motion_cache = {}

    def hook(store: DataStore, ids: np.ndarray) -> None:
        if "speed" not in motion_cache:
            motion_cache["speed"] = _motion(store)
        speed, direction = motion_cache["speed"]
        K.place_kernel(
            ids, store["episode"], np.uint64(layout.placement_seed & MASK64), store["loc_x"],
            store["loc_y"], direction, config.continuous, config.grid_size, float(config.world_length),
        )
        _observe(
            config, layout, ids, False, store["stepped"], store["observations"], store["rewards"],
            store["loc_x"], store["loc_y"], store["is_tagger"], store["active"], speed, direction,
            store["step_count"], store["tag_credits"], store["tagged"],
        )

    return hook


class TagEnv:
    """A locked store, its plan, an engine and a reset manager for one config."""

    def __init__(self, config: TagConfig, num_envs: int, worker_count: int = 1,
                 radius_offset: float = 0.0, auto_reset: bool = True):
        self.config = config
        self.store = DataStore(num_envs, config.num_agents)
        self.plan, self.layout = build_plan(config, self.store, radius_offset)
        self.store.lock()
        self.engine = StepEngine(EngineConfig(num_envs, config.num_agents, worker_count))
        self.resets = ResetManager(
            self.store,
            ResetPolicy(auto=auto_reset, zero_on_reset=ZERO_ON_RESET, counter="episode"),
            reinit=reinit(config, self.layout),
        )

    @property
    def num_envs(self) -> int:
        return self.store.num_envs

    def step(self, step_index: int) -> np.ndarray:
        """One engine step on the current ``sampled_actions`` then auto-reset.

        Returns the ids of environments that finished (and were reset).
        """
        self.engine.run_step(self.plan, self.store, step_index)
        ids = self.resets.detect_done()
        if self.resets.policy.auto and ids.size:
            self.resets.auto_reset(ids)
        return ids

    def close(self):
        self.engine.close()
