"""Fully-connected policy/value network with hand-written backprop.

Parameters live in a flat ``dict[str, ndarray]`` so the optimizer and the
checkpoint writer can treat them uniformly:

    h{i}.W, h{i}.b     hidden layer i (tanh)
    pi{c}.W, pi{c}.b   logits of action category c
    v.W, v.b           scalar value head
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"WARPCKPT"
CHECKPOINT_VERSION = 1


class MissingCacheError(RuntimeError):
    pass


class PolicyShapeError(ValueError):
    pass


@dataclass
class PolicyParams:
    obs_dim: int
    hidden_sizes: tuple[int, ...]
    num_categories: int
    num_choices: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.arrays[key]

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            self.obs_dim, self.hidden_sizes, self.num_categories, self.num_choices,
            {k: v.copy() for k, v in self.arrays.items()},
        )

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.obs_dim, *self.hidden_sizes, self.num_categories, self.num_choices)

    def num_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())


@dataclass
class ForwardCache:
    obs: np.ndarray
    hidden: list[np.ndarray]


def layer_names(params: PolicyParams) -> list[str]:
    names = [f"h{i}" for i in range(len(params.hidden_sizes))]
    names += [f"pi{c}" for c in range(params.num_categories)]
    return names + ["v"]


def init(
    seed: int,
    obs_dim: int,
    num_categories: int,
    num_choices: int,
    hidden_sizes: Sequence[int] = (64, 64),
) -> PolicyParams:
    """Glorot-uniform weights, zero biases."""
    if obs_dim < 1 or num_categories < 1 or num_choices < 1 or any(h < 1 for h in hidden_sizes):
        raise PolicyShapeError("all dims must be positive")
    rng = np.random.default_rng(seed)
    params = PolicyParams(obs_dim, tuple(int(h) for h in hidden_sizes), num_categories, num_choices)

    def dense(name, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.arrays[f"{name}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params.arrays[f"{name}.b"] = np.zeros(fan_out)

    width = obs_dim
    for i, h in enumerate(params.hidden_sizes):
        dense(f"h{i}", width, h)
        width = h
    for c in range(num_categories):
        dense(f"pi{c}", width, num_choices)
    dense("v", width, 1)
    return params


def forward(params: PolicyParams, obs: np.ndarray, return_cache: bool = False):
    """Logits ``[batch, category, choice]`` and values ``[batch]``."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != params.obs_dim:
        raise PolicyShapeError(f"expected [batch, {params.obs_dim}] observations, got {obs.shape}")
    x = obs
    hidden = []
    for i in range(len(params.hidden_sizes)):
        x = np.tanh(x @ params.arrays[f"h{i}.W"] + params.arrays[f"h{i}.b"])
        hidden.append(x)
    logits = np.stack(
        [x @ params.arrays[f"pi{c}.W"] + params.arrays[f"pi{c}.b"] for c in range(params.num_categories)],
        axis=1,
    )
    values = (x @ params.arrays["v.W"] + params.arrays["v.b"])[:, 0]
    if return_cache:
        return logits, values, ForwardCache(obs, hidden)
    return logits, values


def backward(
    params: PolicyParams,
    cache: ForwardCache | None,
    dlogits: np.ndarray,
    dvalues: np.ndarray,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its gradients w.r.t. the outputs."""
    if cache is None:
        raise MissingCacheError("backward needs the cache from forward(..., return_cache=True)")
    batch = cache.obs.shape[0]
    if dlogits.shape != (batch, params.num_categories, params.num_choices) or dvalues.shape != (batch,):
        raise PolicyShapeError("output gradients do not match the cached batch")
    grads: dict[str, np.ndarray] = {}
    top = cache.hidden[-1] if cache.hidden else cache.obs
    dtop = np.zeros_like(top)
    for c in range(params.num_categories):
        g = dlogits[:, c, :]
        grads[f"pi{c}.W"] = top.T @ g
        grads[f"pi{c}.b"] = g.sum(axis=0)
        dtop += g @ params.arrays[f"pi{c}.W"].T
    gv = dvalues[:, None]
    grads["v.W"] = top.T @ gv
    grads["v.b"] = gv.sum(axis=0)
    dtop += gv @ params.arrays["v.W"].T

    dx = dtop
    for i in reversed(range(len(params.hidden_sizes))):
        h = cache.hidden[i]
        dz = dx * (1.0 - h * h)
        below = cache.hidden[i - 1] if i > 0 else cache.obs
        grads[f"h{i}.W"] = below.T @ dz
        grads[f"h{i}.b"] = dz.sum(axis=0)
        dx = dz @ params.arrays[f"h{i}.W"].T
    return {name: grads[name] for name in params.arrays}


# -- policy map ----------------------------------------------------------


def make_policy_map(mapping: Mapping[str, Sequence[int]], num_agents: int) -> dict[str, list[int]]:
    """Validate that the tags partition ``0..num_agents-1``."""
    out = {tag: sorted(int(a) for a in ids) for tag, ids in mapping.items()}
    seen: list[int] = []
    for ids in out.values():
        seen.extend(ids)
    if sorted(seen) != list(range(num_agents)):
        raise ValueError(f"policy map must partition agents 0..{num_agents - 1}, got {out}")
    return out


# -- checkpoints ------------------------------------------------------------


def _pack(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def _unpack(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + n].decode()
        off += n
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    return out


def save_checkpoint(
    path: str | Path,
    policies: Mapping[str, PolicyParams],
    metadata: dict,
    extra: Mapping[str, np.ndarray] | None = None,
) -> Path:
    """Binary blob of every tag's parameters plus a JSON sidecar."""
    path = Path(path)
    arrays = {}
    for tag, params in policies.items():
        for name, arr in params.arrays.items():
            arrays[f"{tag}/{name}"] = arr
    arrays.update(extra or {})
    path.write_bytes(_pack(arrays))
    meta = dict(metadata)
    meta["policies"] = {
        tag: {"obs_dim": p.obs_dim, "hidden_sizes": list(p.hidden_sizes),
              "num_categories": p.num_categories, "num_choices": p.num_choices}
        for tag, p in policies.items()
    }
    meta["sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, PolicyParams], dict, dict[str, np.ndarray]]:
    path = Path(path)
    arrays = _unpack(path.read_bytes())
    meta = json.loads(path.with_suffix(".json").read_text())
    policies = {}
    for tag, dims in meta["policies"].items():
        params = PolicyParams(dims["obs_dim"], tuple(dims["hidden_sizes"]), dims["num_categories"], dims["num_choices"])
        prefix = f"{tag}/"
        for name in init(0, params.obs_dim, params.num_categories, params.num_choices, params.hidden_sizes).arrays:
            params.arrays[name] = arrays.pop(prefix + name)
        policies[tag] = params
    return policies, meta, arrays
