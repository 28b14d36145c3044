import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from warpsim.engine import EngineConfig, StepEngine
from warpsim.rng import uniforms
from warpsim.sampler import NonFiniteLogitsError, categorical_index, sample_actions, sample_reference, softmax


def draws(probs, n_envs=1000, n_agents=1000, seed=11):
    logits = np.broadcast_to(np.log(probs), (n_envs, n_agents, 1, len(probs)))
    return sample_actions(logits, 0, seed).reshape(-1)


def test_near_deterministic_logit():
    logits = np.broadcast_to(np.array([1000.0, 0, 0, 0, 0]), (100, 100, 1, 5))
    acts = sample_actions(logits, 0, 1)
    assert (acts == 0).mean() > 0.999


def test_uniform_frequencies():
    counts = np.bincount(draws(np.full(5, 0.2)), minlength=5) / 1e6
    assert ((counts >= 0.198) & (counts <= 0.202)).all()


@pytest.mark.parametrize("probs", [(0.5, 0.3, 0.2), (0.2,) * 5])
def test_chi_square(probs):
    probs = np.array(probs)
    counts = np.bincount(draws(probs), minlength=len(probs))
    assert stats.chisquare(counts, probs * counts.sum()).pvalue > 0.01


def test_ties_go_low():
    # u equal to a CDF boundary belongs to the next bucket (strict u < cdf)
    row = np.log(np.array([0.5, 0.5]))
    assert categorical_index(row, 0.0) == 0
    assert categorical_index(row, 0.4999999) == 0
    assert categorical_index(row, 0.5) == 1
    assert sample_reference(row, 0.5) == 1


@given(
    logits=st.lists(st.floats(-30, 30), min_size=2, max_size=8),
    u=st.floats(0, 1, exclude_max=True),
)
def test_compiled_matches_reference(logits, u):
    row = np.array(logits)
    assert categorical_index(row, u) == sample_reference(row, u)
    assert 0 <= categorical_index(row, u) < len(logits)


@given(shift=st.sampled_from([-512.0, -3.0, 0.0, 64.0, 1024.0]), seed=st.integers(0, 1000))
def test_shift_invariance(shift, seed):
    # power-of-two-friendly shifts keep the shifted logits exact, so actions are identical
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(4, 3, 2, 5)).round(3)
    a = sample_actions(logits, 2, seed)
    b = sample_actions(logits + shift, 2, seed)
    assert np.array_equal(a, b)
    assert np.allclose(softmax(logits), softmax(logits + shift))


def test_deterministic_across_workers():
    logits = np.random.default_rng(0).normal(size=(97, 6, 2, 3))
    base = sample_actions(logits, 9, 123)
    for workers in (2, 4, 16):
        with StepEngine(EngineConfig(97, 6, workers)) as engine:
            assert np.array_equal(sample_actions(logits, 9, 123, engine=engine), base)


def test_uses_keyed_uniforms():
    logits = np.random.default_rng(1).normal(size=(3, 4, 2, 5))
    acts = sample_actions(logits, 7, 5)
    u = uniforms(5, 7, 3, 4, 2)
    for idx in np.ndindex(3, 4, 2):
        assert acts[idx] == sample_reference(logits[idx], u[idx])


def test_rejects_bad_input():
    with pytest.raises(NonFiniteLogitsError):
        sample_actions(np.full((1, 1, 1, 2), np.nan), 0, 0)
    with pytest.raises(ValueError):
        sample_actions(np.zeros((1, 2, 3)), 0, 0)
