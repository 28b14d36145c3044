import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from warpsim.rng import SampleKey, derive_seed, philox4x32, philox_uniform, uniform, uniforms

M32 = 0xFFFFFFFF


def test_philox_known_answers():
    # Random123 philox4x32-10 known-answer vectors
    assert philox4x32((0, 0, 0, 0), (0, 0)) == (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)
    assert philox4x32((M32,) * 4, (M32, M32)) == (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)
    assert philox4x32(
        (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0)
    ) == (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)


def test_same_key_same_value():
    key = SampleKey(seed=42, step=3, env_id=1, agent_id=2, category=1, draw=0)
    assert uniform(key) == uniform(key)


@given(
    seed=st.integers(0, 2**64 - 1),
    step=st.integers(0, 2**32 - 1),
    env=st.integers(0, 2**31 - 1),
    agent=st.integers(0, 2**31 - 1),
    category=st.integers(0, 0xFFFF),
    draw=st.integers(0, 0xFFFF),
)
def test_compiled_matches_python(seed, step, env, agent, category, draw):
    want = uniform(SampleKey(seed, step, env, agent, category, draw))
    assert philox_uniform(np.uint64(seed), step, env, agent, category, draw) == want
    assert 0.0 <= want < 1.0


def test_batched_matches_scalar():
    u = uniforms(7, 5, 3, 4, 2)
    for e in range(3):
        for a in range(4):
            for c in range(2):
                assert u[e, a, c] == uniform(SampleKey(7, 5, e, a, c))


def test_mean_of_million_draws():
    u = uniforms(2024, 0, 1000, 1000)
    assert abs(u.mean() - 0.5) < 0.002


def test_env_neighbours_uncorrelated():
    u = uniforms(99, 0, 2, 100_000)[:, :, 0]
    r = np.corrcoef(u[0], u[1])[0, 1]
    assert abs(r) < 0.01


def test_derive_seed_changes_stream():
    s = derive_seed(5, 0x1234)
    assert s != 5
    assert uniforms(s, 0, 1, 8).tobytes() != uniforms(5, 0, 1, 8).tobytes()
