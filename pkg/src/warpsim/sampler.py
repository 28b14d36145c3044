"""Batched categorical action sampling.

Each (env, agent, category) row of logits is turned into probabilities with a
max-shifted softmax, and the action is the first index whose cumulative
probability exceeds one counter-based uniform.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from .rng import MASK64, philox_uniform


class NonFiniteLogitsError(ValueError):
    pass


@nb.njit(nogil=True, cache=True)
def categorical_index(row, u):
    """Inverse-CDF draw from softmax(row) using uniform ``u``."""
    k = row.shape[0]
    m = row[0]
    for j in range(1, k):
        if row[j] > m:
            m = row[j]
    total = 0.0
    for j in range(k):
        total += math.exp(row[j] - m)
    cdf = 0.0
    for j in range(k):
        cdf += math.exp(row[j] - m) / total
        if u < cdf:
            return j
    return k - 1


@nb.njit(nogil=True, cache=True)
def _sample_block(logits, seed, step, env_ids, out):
    num_agents = logits.shape[1]
    num_categories = logits.shape[2]
    for i in range(env_ids.shape[0]):
        e = env_ids[i]
        for a in range(num_agents):
            for c in range(num_categories):
                u = philox_uniform(seed, step, e, a, c, 0)
                out[e, a, c] = categorical_index(logits[e, a, c], u)


def sample_actions(
    logits: np.ndarray,
    step: int,
    seed: int,
    out: np.ndarray | None = None,
    engine=None,
) -> np.ndarray:
    """Sample an action per (env, agent, category).

    ``logits`` has shape ``[env, agent, category, choice]``.  Results go into
    ``out`` in place when given (e.g. the store's ``sampled_actions``).  With an
    ``engine`` the env ranges are spread over its workers.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 4:
        raise ValueError(f"logits must be [env, agent, category, choice], got {logits.shape}")
    if not np.isfinite(logits).all():
        raise NonFiniteLogitsError("logits contain NaN or inf")
    if out is None:
        out = np.empty(logits.shape[:3], dtype=np.int32)
    elif out.shape != logits.shape[:3]:
        raise ValueError(f"out shape {out.shape} does not match logits {logits.shape[:3]}")
    seed = np.uint64(seed & MASK64)

    def work(env_ids):
        _sample_block(logits, seed, step, env_ids, out)

    if engine is None:
        work(np.arange(logits.shape[0], dtype=np.int64))
    else:
        engine.map_envs(work, logits.shape[0])
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sample_reference(row, u: float) -> int:
    """Pure-Python twin of ``categorical_index``."""
    m = max(row)
    total = 0.0
    for x in row:
        total += math.exp(x - m)
    cdf = 0.0
    for j, x in enumerate(row):
        cdf += math.exp(x - m) / total
        if u < cdf:
            return j
    return len(row) - 1
