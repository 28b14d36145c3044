"""Stateless counter-based uniforms (Philox4x32-10).

A uniform is a pure function of ``(seed, step, env, agent, category, draw)``:
the 64-bit seed is the Philox key and the remaining fields form the 128-bit
counter.  There is no generator state to share between workers.

Two implementations live here: plain Python integers (``philox4x32``,
``uniform``) and a numba version used inside kernels (``philox_uniform``).
They must agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

PHILOX_M0 = 0xD2511F53
PHILOX_M1 = 0xCD9E8D57
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF

# keys for streams other than action sampling
PLACEMENT_SALT = 0x5DEECE66D2F1A3B7


@dataclass(frozen=True)
class SampleKey:
    seed: int
    step: int = 0
    env_id: int = 0
    agent_id: int = 0
    category: int = 0
    draw: int = 0


def philox4x32(counter: tuple[int, int, int, int], key: tuple[int, int], rounds: int = 10):
    c0, c1, c2, c3 = (c & MASK32 for c in counter)
    k0, k1 = key[0] & MASK32, key[1] & MASK32
    for i in range(rounds):
        if i:
            k0 = (k0 + PHILOX_W0) & MASK32
            k1 = (k1 + PHILOX_W1) & MASK32
        p0 = PHILOX_M0 * c0
        p1 = PHILOX_M1 * c2
        c0, c1, c2, c3 = (
            ((p1 >> 32) ^ c1 ^ k0) & MASK32,
            p1 & MASK32,
            ((p0 >> 32) ^ c3 ^ k1) & MASK32,
            p0 & MASK32,
        )
    return c0, c1, c2, c3


def _counter(step: int, env_id: int, agent_id: int, category: int, draw: int):
    return (step, env_id, agent_id, (category & 0xFFFF) | ((draw & 0xFFFF) << 16))


def _key(seed: int):
    seed &= MASK64
    return seed & MASK32, seed >> 32


def uniform(key: SampleKey) -> float:
    """Uniform in [0, 1) with 53 random bits."""
    w = philox4x32(
        _counter(key.step, key.env_id, key.agent_id, key.category, key.draw), _key(key.seed)
    )
    return ((w[0] >> 5) * 67108864 + (w[1] >> 6)) / 9007199254740992.0


def derive_seed(seed: int, salt: int) -> int:
    return (seed ^ salt) & MASK64


# -- numba ---------------------------------------------------------------


@nb.njit(inline="always")
def _mulhilo(a, b):
    p = nb.uint64(a) * nb.uint64(b)
    return nb.uint32(p >> nb.uint64(32)), nb.uint32(p & nb.uint64(0xFFFFFFFF))


@nb.njit(nogil=True, cache=True)
def philox_words(c0, c1, c2, c3, k0, k1):
    c0 = nb.uint32(c0)
    c1 = nb.uint32(c1)
    c2 = nb.uint32(c2)
    c3 = nb.uint32(c3)
    k0 = nb.uint32(k0)
    k1 = nb.uint32(k1)
    for i in range(10):
        if i > 0:
            k0 = nb.uint32(k0 + nb.uint32(PHILOX_W0))
            k1 = nb.uint32(k1 + nb.uint32(PHILOX_W1))
        hi0, lo0 = _mulhilo(PHILOX_M0, c0)
        hi1, lo1 = _mulhilo(PHILOX_M1, c2)
        n0 = hi1 ^ c1 ^ k0
        n2 = hi0 ^ c3 ^ k1
        c0 = n0
        c1 = lo1
        c2 = n2
        c3 = lo0
    return c0, c1, c2, c3


@nb.njit(nogil=True, cache=True)
def philox_uniform(seed, step, env_id, agent_id, category, draw):
    s = nb.uint64(seed)
    k0 = nb.uint32(s & nb.uint64(0xFFFFFFFF))
    k1 = nb.uint32(s >> nb.uint64(32))
    c3 = (nb.uint64(category) & nb.uint64(0xFFFF)) | (
        (nb.uint64(draw) & nb.uint64(0xFFFF)) << nb.uint64(16)
    )
    w0, w1, w2, w3 = philox_words(
        nb.uint32(nb.uint64(step) & nb.uint64(0xFFFFFFFF)),
        nb.uint32(nb.uint64(env_id) & nb.uint64(0xFFFFFFFF)),
        nb.uint32(nb.uint64(agent_id) & nb.uint64(0xFFFFFFFF)),
        nb.uint32(c3),
        k0,
        k1,
    )
    hi = nb.uint64(w0 >> nb.uint32(5))
    lo = nb.uint64(w1 >> nb.uint32(6))
    return float(hi * nb.uint64(67108864) + lo) / 9007199254740992.0


@nb.njit(nogil=True, cache=True)
def _uniform_block(seed, step, env_ids, num_agents, num_categories, draw, out):
    for i in range(env_ids.shape[0]):
        e = env_ids[i]
        for a in range(num_agents):
            for c in range(num_categories):
                out[e, a, c] = philox_uniform(seed, step, e, a, c, draw)


def uniforms(seed: int, step: int, num_envs: int, num_agents: int, num_categories: int = 1, draw: int = 0) -> np.ndarray:
    """Batched ``uniform`` over every (env, agent, category)."""
    out = np.empty((num_envs, num_agents, num_categories), dtype=np.float64)
    _uniform_block(
        np.uint64(seed & MASK64), step, np.arange(num_envs, dtype=np.int64), num_agents, num_categories, draw, out
    )
    return out
