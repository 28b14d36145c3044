import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from warpsim import policy as pm
from warpsim.data_store import BOOLEAN, DataStore, spec
from warpsim.engine import PER_ENV, EngineConfig, Phase, PhasePlan, StepEngine, Write
from warpsim.reset import ResetManager, ResetPolicy
from warpsim.tag import TagConfig, TagEnv
from warpsim.trainer import (
    Adam,
    Trainer,
    TrainerConfig,
    a2c_loss,
    action_log_prob,
    clip_grad_norm,
    compute_returns,
    normalize_advantages,
    ppo_loss,
)

from oracles import discounted_returns, unclipped_surrogate


def test_returns_example():
    r = compute_returns(np.ones((3, 1)), [[False], [False], [True]], np.zeros(1), 0.9)
    assert r[:, 0] == pytest.approx([2.71, 1.9, 1.0])


def test_gamma_zero_equals_rewards():
    rewards = np.random.default_rng(0).normal(size=(6, 3))
    assert np.allclose(compute_returns(rewards, np.zeros((6, 3), bool), np.ones(3), 1e-12), rewards)


def test_done_cuts_future():
    rewards = np.array([[1.0], [2.0], [100.0]])
    r = compute_returns(rewards, [[False], [True], [False]], np.array([50.0]), 0.5)
    assert r[0, 0] == pytest.approx(1.0 + 0.5 * 2.0)


@given(
    seed=st.integers(0, 10_000),
    T=st.integers(1, 30),
    gamma=st.floats(0.01, 0.999),
)
def test_returns_match_oracle_and_recursion(seed, T, gamma):
    rng = np.random.default_rng(seed)
    rewards = rng.normal(size=T)
    dones = rng.random(T) < 0.2
    boot = rng.normal()
    got = compute_returns(rewards[:, None], dones[:, None], np.array([boot]), gamma)[:, 0]
    assert np.allclose(got, discounted_returns(rewards, dones, boot, gamma), atol=1e-6, rtol=0)
    for t in range(T - 1):
        if not dones[t]:
            assert abs(got[t] - rewards[t] - gamma * got[t + 1]) < 1e-6


def batch(seed, n=40, obs_dim=5, cats=2, choices=3):
    rng = np.random.default_rng(seed)
    params = pm.init(seed, obs_dim, cats, choices, (8,))
    obs = rng.normal(size=(n, obs_dim))
    actions = rng.integers(0, choices, size=(n, cats))
    returns = rng.normal(size=n)
    return params, obs, actions, returns


def test_uniform_policy_entropy():
    params, obs, actions, returns = batch(0, cats=1, choices=5)
    for name in params.arrays:
        if name.startswith("pi"):
            params.arrays[name][:] = 0
    res = a2c_loss(params, obs, actions, returns)
    assert res.entropy == pytest.approx(np.log(5), abs=1e-12)


def test_zero_advantage_no_policy_term():
    params, obs, actions, _ = batch(1)
    _, values = pm.forward(params, obs)
    res = a2c_loss(params, obs, actions, values, entropy_coef=0.0)
    assert res.policy_loss == pytest.approx(0.0, abs=1e-12)
    assert res.value_loss == pytest.approx(0.0, abs=1e-12)
    assert all(np.allclose(g, 0, atol=1e-12) for g in res.grads.values())


def test_masked_rows_contribute_nothing():
    params, obs, actions, returns = batch(2)
    mask = np.arange(len(obs)) % 3 != 0
    res = a2c_loss(params, obs, actions, returns, mask)
    garbage_obs = obs.copy()
    garbage_obs[~mask] = 1e3
    garbage_ret = returns.copy()
    garbage_ret[~mask] = -1e6
    other = a2c_loss(params, garbage_obs, actions, garbage_ret, mask)
    assert res.loss == pytest.approx(other.loss, abs=1e-12)
    for name in res.grads:
        assert np.allclose(res.grads[name], other.grads[name], atol=1e-12)
    sub = a2c_loss(params, obs[mask], actions[mask], returns[mask])
    assert res.loss == pytest.approx(sub.loss, abs=1e-12)


def test_ppo_same_params_is_policy_gradient():
    params, obs, actions, returns = batch(3)
    logits, values = pm.forward(params, obs)
    old = action_log_prob(logits, actions)
    adv = returns - values
    res = ppo_loss(params, obs, actions, returns, old, adv, entropy_coef=0.0, value_coef=0.0)
    a2c = a2c_loss(params, obs, actions, returns, entropy_coef=0.0, value_coef=0.0)
    assert res.policy_loss == pytest.approx(-adv.mean(), abs=1e-12)
    for name in res.grads:
        assert np.allclose(res.grads[name], a2c.grads[name], atol=1e-12)


@given(seed=st.integers(0, 1000))
def test_ppo_infinite_clip_is_unclipped(seed):
    params, obs, actions, returns = batch(seed)
    logits, _ = pm.forward(params, obs)
    rng = np.random.default_rng(seed)
    old = action_log_prob(logits, actions) + rng.normal(scale=0.5, size=len(obs))
    adv = rng.normal(size=len(obs))
    mask = rng.random(len(obs)) < 0.8
    res = ppo_loss(params, obs, actions, returns, old, adv, mask, clip=1e12)
    ratio = np.exp(action_log_prob(logits, actions) - old)
    assert res.policy_loss == pytest.approx(unclipped_surrogate(ratio, adv, mask), abs=1e-6)


def test_ppo_clipped_branch_has_no_gradient():
    # one row with ratio 2, eps 0.2 and positive advantage: the clipped branch is active
    params, obs, actions, returns = batch(4, n=1)
    logits, _ = pm.forward(params, obs)
    old = action_log_prob(logits, actions) - np.log(2.0)
    res = ppo_loss(params, obs, actions, returns, old, np.array([1.5]), clip=0.2,
                   value_coef=0.0, entropy_coef=0.0)
    assert res.policy_loss == pytest.approx(-1.2 * 1.5)
    assert all((g == 0).all() for g in res.grads.values())


def test_advantage_normalization():
    adv = np.array([1.0, 2.0, 3.0, 100.0])
    mask = np.array([True, True, True, False])
    out = normalize_advantages(adv, mask)
    assert out[mask].mean() == pytest.approx(0.0, abs=1e-12)
    assert out[mask].std() == pytest.approx(1.0, abs=1e-6)


def test_clip_grad_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_grad_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert grads["a"][0] == pytest.approx(0.6) and grads["b"][0] == pytest.approx(0.8)


def test_adam_first_step_is_lr_times_sign():
    params = pm.init(0, 2, 1, 2, (3,))
    before = params.copy()
    grads = {k: np.full_like(v, -0.25) for k, v in params.arrays.items()}
    Adam(params, 0.01).step(params, grads)
    for k in params.arrays:
        assert np.allclose(params[k] - before[k], 0.01, atol=1e-9)


# -- end-to-end on tiny environments ------------------------------------------


class ConstantRewardEnv:
    """Every agent earns 1 per step and episodes never end."""

    def __init__(self, num_envs=4, num_agents=2):
        store = DataStore(num_envs, num_agents)
        store.register_array(spec("observations", (num_envs, num_agents, 3)),
                             np.ones(num_envs * num_agents * 3))
        store.register_array(spec("sampled_actions", (num_envs, num_agents, 1)))
        store.register_array(spec("rewards", (num_envs, num_agents)))
        store.register_array(spec("done", (num_envs,), BOOLEAN))
        store.lock()

        def reward(store, env_ids, step):
            store["rewards"][env_ids] = 1.0

        self.store = store
        self.plan = PhasePlan([Phase("reward", PER_ENV, reward, (Write("rewards", "env"),))])
        self.engine = StepEngine(EngineConfig(num_envs, num_agents))
        self.resets = ResetManager(store, ResetPolicy())


def test_value_converges_to_geometric_sum():
    env = ConstantRewardEnv()
    cfg = TrainerConfig(gamma=0.9, rollout_horizon=20, learning_rate=0.02, iterations=400,
                        entropy_coef=0.0, max_grad_norm=10.0, hidden_sizes=(8,))
    trainer = Trainer(env, cfg, {"all": [0, 1]}, (1, 2))
    trainer.train()
    _, values = trainer.policy_logits(env.store["observations"])
    assert np.allclose(values, 10.0, atol=0.2)


def test_zero_iterations_changes_nothing():
    env = ConstantRewardEnv()
    trainer = Trainer(env, TrainerConfig(iterations=0, hidden_sizes=(4,)), {"all": [0, 1]}, (1, 2))
    before = trainer.policies["all"].copy()
    report = trainer.train()
    assert report.rows == []
    for k in before.arrays:
        assert np.array_equal(before[k], trainer.policies["all"][k])


def tag_trainer(seed=0, algorithm="a2c", workers=1):
    cfg = TagConfig(num_taggers=1, num_runners=4, episode_length=20, seed=seed)
    env = TagEnv(cfg, 6, workers)
    tcfg = TrainerConfig(rollout_horizon=16, iterations=3, seed=seed, algorithm=algorithm,
                         hidden_sizes=(16,))
    return Trainer(env, tcfg, {"tagger": [0], "runner": [1, 2, 3, 4]}, cfg.action_space)


@pytest.mark.parametrize("algorithm", ["a2c", "ppo"])
def test_training_is_deterministic(tmp_path, algorithm):
    blobs = []
    for i, workers in enumerate((1, 3)):
        trainer = tag_trainer(algorithm=algorithm, workers=workers)
        report = trainer.train()
        assert [r["iteration"] for r in report.rows] == [0, 1, 2]
        blobs.append(trainer.save(tmp_path / f"{i}.ckpt").read_bytes())
    assert blobs[0] == blobs[1]


def test_report_columns():
    report = tag_trainer().train(1)
    row = report.rows[0]
    for key in ("iteration", "wall_ms", "steps_per_sec", "tagger_mean_episode_reward",
                "tagger_loss", "tagger_policy_loss", "tagger_value_loss", "tagger_entropy",
                "runner_mean_episode_reward"):
        assert key in row


def test_inactive_rows_are_masked():
    trainer = tag_trainer()
    trainer.collect()
    b = trainer.batch
    # rows whose agent was inactive before the step carry zero observations
    assert (~b.active).any()
    assert (b.obs[~b.active] == 0).all()
    # a tagged runner's last live step is terminal for that agent
    newly_out = b.active[:-1] & ~b.active[1:] & ~b.done[:-1, :, None]
    assert b.terminal[:-1][newly_out].all()


def test_resume_restores_parameters(tmp_path):
    trainer = tag_trainer()
    trainer.train(2)
    path = trainer.save(tmp_path / "t.ckpt")
    other = tag_trainer()
    meta = other.load(path)
    assert meta["iteration"] == 2 and other.iteration == 2
    for tag in trainer.policies:
        for k in trainer.policies[tag].arrays:
            assert trainer.policies[tag][k].tobytes() == other.policies[tag][k].tobytes()
    assert other.train(1).rows[0]["iteration"] == 2
