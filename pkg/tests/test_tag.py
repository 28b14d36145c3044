import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from warpsim.data_store import DataStore
from warpsim.tag import InvalidConfigError, TagConfig, TagEnv, TagReference, build_plan
from warpsim.tag.kernels import move_continuous, move_discrete, wrap_angle
from warpsim.tag.reference import ref_move_discrete

NOOP = 0


def scene(config, xs, ys, taggers=None):
    """A single un-reset env with hand-placed agents, stepped once with no-ops."""
    env = TagEnv(config, 1, auto_reset=False)
    s = env.store
    s["loc_x"][0] = xs
    s["loc_y"][0] = ys
    if config.continuous:
        s["speed"][0] = 0
        s["sampled_actions"][:] = 1  # neutral accel and turn
    else:
        s["sampled_actions"][:] = NOOP
    env.step(0)
    env.close()
    return s


def test_build_plan_registrations():
    store = DataStore(2, 5)
    build_plan(TagConfig(num_taggers=1, num_runners=4), store)
    assert store["loc_x"].shape == (2, 5)
    assert "speed" not in store and "direction" not in store
    store = DataStore(2, 5)
    build_plan(TagConfig(variant="continuous", num_taggers=1, num_runners=4), store)
    assert "speed" in store and "direction" in store


def test_invalid_k():
    with pytest.raises(InvalidConfigError):
        TagConfig(num_taggers=1, num_runners=4, obs_mode="partial", k_nearest=10)


def test_move_table():
    assert move_discrete(1, 3, 3, 20) == (3, 4)
    assert move_discrete(3, 0, 0, 20) == (0, 0)
    table = {0: (10, 10), 1: (10, 11), 2: (10, 9), 3: (9, 10), 4: (11, 10)}
    for action, cell in table.items():
        assert move_discrete(action, 10, 10, 20) == cell == ref_move_discrete(action, 10, 10, 20)


@given(action=st.integers(0, 4), x=st.integers(0, 19), y=st.integers(0, 19))
def test_move_stays_on_grid(action, x, y):
    nx, ny = move_discrete(action, x, y, 20)
    assert 0 <= nx < 20 and 0 <= ny < 20
    assert abs(nx - x) + abs(ny - y) <= 1


def test_continuous_kinematics():
    theta = 0.7
    s, d, x, y = move_continuous(2, 1, 0.0, theta, 5.0, 5.0, 1.0, 0.1, math.pi / 6, 20.0)
    assert s == pytest.approx(0.1, abs=1e-7)
    assert x == pytest.approx(5.0 + 0.1 * math.cos(theta), abs=1e-5)
    assert y == pytest.approx(5.0 + 0.1 * math.sin(theta), abs=1e-5)
    s, *_ = move_continuous(0, 1, 0.0, theta, 5.0, 5.0, 1.0, 0.1, math.pi / 6, 20.0)
    assert s == 0.0


def test_quarter_turns_return_home():
    d = 0.3
    for _ in range(4):
        _, d, _, _ = move_continuous(1, 2, 0.0, d, 5.0, 5.0, 1.0, 0.1, math.pi / 2, 20.0)
    gap = abs(d - 0.3) % (2 * math.pi)
    assert min(gap, 2 * math.pi - gap) < 1e-5


@given(st.floats(-2 * math.pi + 1e-9, 4 * math.pi - 1e-9))
def test_wrap_range(d):
    w = wrap_angle(d)
    assert 0.0 <= w < 2 * math.pi


def test_same_cell_tag():
    cfg = TagConfig(num_taggers=1, num_runners=2, episode_length=10)
    s = scene(cfg, [4, 4, 9], [4, 4, 9])
    assert s["active"][0].tolist() == [True, False, True]
    assert s["rewards"][0].tolist() == [1.0, -1.0, 0.0]
    assert s["tag_credits"][0].tolist() == [1, 0, 0]


def test_no_tagger_in_range():
    cfg = TagConfig(variant="continuous", num_taggers=1, num_runners=2, episode_length=10)
    s = scene(cfg, [1.0, 5.0, 9.0], [1.0, 5.0, 9.0])
    assert s["active"][0].all()
    assert (s["rewards"][0] == 0).all()


def test_equidistant_taggers_lower_index_credited():
    cfg = TagConfig(variant="continuous", num_taggers=2, num_runners=1, episode_length=10)
    s = scene(cfg, [4.5, 5.5, 5.0], [5.0, 5.0, 5.0])
    assert s["tag_credits"][0].tolist() == [1, 0, 0]
    assert s["rewards"][0].tolist() == [1.0, 0.0, -1.0]


def test_double_tag_reward():
    cfg = TagConfig(num_taggers=1, num_runners=3, episode_length=10)
    s = scene(cfg, [2, 2, 2, 7], [3, 3, 3, 7])
    assert s["rewards"][0].tolist() == [2.0, -1.0, -1.0, 0.0]


def test_observation_offsets():
    cfg = TagConfig(num_taggers=1, num_runners=1, episode_length=10)
    s = scene(cfg, [0, 3], [0, 4])
    obs = s["observations"][0, 0]
    assert obs[:4].tolist() == pytest.approx([0.15, 0.20, 0.0, 1.0])
    assert obs[4:6].tolist() == [0.0, 0.0]
    assert obs[6] == pytest.approx(0.1)


def test_inactive_runner_zero_observation():
    cfg = TagConfig(num_taggers=1, num_runners=2, episode_length=10)
    s = scene(cfg, [4, 4, 9], [4, 4, 9])
    assert (s["observations"][0, 1] == 0).all()
    assert (s["observations"][0, 2] != 0).any()


@given(
    xs=st.lists(st.floats(0, 20, width=32), min_size=4, max_size=4),
    ys=st.lists(st.floats(0, 20, width=32), min_size=4, max_size=4),
)
def test_partial_matches_brute_force(xs, ys):
    cfg = TagConfig(variant="continuous", num_taggers=1, num_runners=3, obs_mode="partial",
                    k_nearest=2, tag_radius=0.0, episode_length=10)
    s = scene(cfg, xs, ys)
    x = s["loc_x"][0].astype(np.float64)
    y = s["loc_y"][0].astype(np.float64)
    for a in range(4):
        if not s["active"][0, a]:
            continue
        others = sorted((j for j in range(4) if j != a), key=lambda j: ((x[j] - x[a]) ** 2 + (y[j] - y[a]) ** 2, j))[:2]
        obs = s["observations"][0, a]
        for slot in range(2):
            block = obs[slot * 7: slot * 7 + 4]
            j = others[slot]
            assert block[0] == np.float32((x[j] - x[a]) / 20.0)
            assert block[1] == np.float32((y[j] - y[a]) / 20.0)
            assert block[3] == float(s["active"][0, j])


def test_done_at_episode_length():
    cfg = TagConfig(num_taggers=1, num_runners=4, episode_length=7)
    env = TagEnv(cfg, 10, auto_reset=False)
    for t in range(cfg.episode_length):
        assert not env.store["done"].all()
        env.step(t)
    assert env.store["done"].all()


def test_seed_changes_trajectory():
    a = TagReference(TagConfig(seed=1), 2)
    b = TagReference(TagConfig(seed=2), 2)
    assert a.positions()[0].tobytes() != b.positions()[0].tobytes()


def test_episodes_start_from_new_placements():
    cfg = TagConfig(num_taggers=1, num_runners=3, episode_length=2)
    env = TagEnv(cfg, 1)
    first = env.store["loc_x"].copy(), env.store["loc_y"].copy()
    env.store["sampled_actions"][:] = NOOP
    env.step(0)
    env.step(1)
    assert env.store["episode"][0] == 1
    second = env.store["loc_x"], env.store["loc_y"]
    assert first[0].tobytes() + first[1].tobytes() != second[0].tobytes() + second[1].tobytes()


@given(
    variant=st.sampled_from(["discrete", "continuous"]),
    obs_mode=st.sampled_from(["full", "partial"]),
    seed=st.integers(0, 10_000),
    taggers=st.integers(1, 3),
    runners=st.integers(1, 8),
)
def test_step_invariants(variant, obs_mode, seed, taggers, runners):
    cfg = TagConfig(variant=variant, obs_mode=obs_mode, seed=seed, num_taggers=taggers,
                    num_runners=runners, k_nearest=min(3, taggers + runners - 1),
                    grid_size=6, world_length=6.0, tag_radius=1.5, episode_length=15)
    env = TagEnv(cfg, 4, auto_reset=False)
    s = env.store
    rng = np.random.default_rng(seed)
    _, k = cfg.action_space
    runners_alive = (~s["is_tagger"] & s["active"]).sum(1)
    for t in range(cfg.episode_length):
        s["sampled_actions"][:] = rng.integers(0, k, size=s["sampled_actions"].shape)
        was_active = s["active"].copy()
        env.step(t)
        size = cfg.world_size
        assert (s["loc_x"] >= 0).all() and (s["loc_x"] <= size).all()
        assert (s["loc_y"] >= 0).all() and (s["loc_y"] <= size).all()
        alive = (~s["is_tagger"] & s["active"]).sum(1)
        assert (alive <= runners_alive).all()
        runners_alive = alive
        # reward conservation per tag event
        tagged = s["tagged"]
        assert (tagged <= was_active).all()
        assert s["tag_credits"].sum() == tagged.sum()
        tagger_rew = np.where(s["is_tagger"], s["rewards"], 0).sum()
        assert tagger_rew == cfg.tag_reward * tagged.sum()
        assert (s["rewards"][tagged] == cfg.tagged_penalty).all()
        assert (s["rewards"][~s["is_tagger"] & ~tagged] == 0).all()
    assert s["done"].all()
    env.close()


def test_config_replace_revalidates():
    with pytest.raises(InvalidConfigError):
        dataclasses.replace(TagConfig(), num_runners=0)


def test_tagged_runner_observed_with_active_flag_cleared():
    # runner 1 is tagged on the tagger's cell and stays observable there with active = 0
    cfg = TagConfig(num_taggers=1, num_runners=2, obs_mode="partial", k_nearest=2, episode_length=10)
    for mode in ("partial", "full"):
        s = scene(dataclasses.replace(cfg, obs_mode=mode), [4, 4, 9], [4, 4, 6])
        obs = s["observations"][0, 0]
        assert obs[:4].tolist() == [0.0, 0.0, 0.0, 0.0]
        assert obs[4:8].tolist() == pytest.approx([0.25, 0.10, 0.0, 1.0])
