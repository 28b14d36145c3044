"""Independent oracles shared by the unit and acceptance tests.

Each oracle is written the slow, obvious way so it shares no code with the
implementation it checks.
"""

from __future__ import annotations

import numpy as np

from warpsim import policy as pm


def discounted_returns(rewards, dones, bootstrap, gamma):
    """Brute-force: for every t, sum forward until the episode ends or the batch does."""
    rewards = np.asarray(rewards, dtype=np.float64)
    T = len(rewards)
    out = np.zeros(T)
    for t in range(T):
        total = 0.0
        factor = 1.0
        ended = False
        for k in range(t, T):
            total += factor * rewards[k]
            factor *= gamma
            if dones[k]:
                ended = True
                break
        if not ended:
            total += factor * bootstrap
        out[t] = total
    return out


def random_policy_problem(seed, obs_dim=6, categories=2, choices=3, hidden=(5, 4), batch=10):
    rng = np.random.default_rng(seed)
    params = pm.init(seed, obs_dim, categories, choices, hidden)
    for name in params.arrays:  # non-zero biases so their gradients are exercised
        if name.endswith(".b"):
            params.arrays[name][:] = rng.normal(scale=0.3, size=params.arrays[name].shape)
    obs = rng.normal(size=(batch, obs_dim))
    dlogits = rng.normal(size=(batch, categories, choices))
    dvalues = rng.normal(size=batch)
    return params, obs, dlogits, dvalues


def finite_difference_grads(params, obs, dlogits, dvalues, eps=1e-4):
    """Central differences of L = <dlogits, logits> + <dvalues, values> for every parameter."""

    def loss(p):
        logits, values = pm.forward(p, obs)
        return float((dlogits * logits).sum() + (dvalues * values).sum())

    grads = {}
    for name, arr in params.arrays.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = loss(params)
            arr[idx] = orig - eps
            down = loss(params)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for name in numeric:
        a, n = analytic[name], numeric[name]
        err = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float(err.max()))
    return worst


def unclipped_surrogate(ratio, advantages, mask):
    m = np.asarray(mask, bool)
    return float(-(ratio * advantages)[m].mean())
