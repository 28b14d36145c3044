"""Sequential pure-Python Tag, the oracle for the parallel engine.

Shares no code with the kernels: brute-force neighbour and tag searches,
pure-Python Philox for placement and sampling.  Only the float32 rounding
points are mirrored, so the two must agree bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

from ..rng import PLACEMENT_SALT, SampleKey, derive_seed, uniform
from ..sampler import sample_reference
from .config import MOVES, PARTIAL, TagConfig

TWO_PI = 2.0 * math.pi


def f32(x: float) -> float:
    return float(np.float32(x))


def ref_move_discrete(action: int, x: int, y: int, grid_size: int) -> tuple[int, int]:
    dx, dy = MOVES[action]
    return min(max(x + dx, 0), grid_size - 1), min(max(y + dy, 0), grid_size - 1)


def ref_wrap(d: float) -> float:
    if d >= TWO_PI:
        d -= TWO_PI
    elif d < 0.0:
        d += TWO_PI
    d = f32(d)
    return 0.0 if d >= TWO_PI or d < 0.0 else d


class TagReference:
    def __init__(self, config: TagConfig, num_envs: int, radius_offset: float = 0.0):
        self.config = config
        self.num_envs = num_envs
        self.radius = config.radius + radius_offset
        n = config.num_agents
        self.n = n
        self.pseed = derive_seed(config.seed, PLACEMENT_SALT)
        self.is_tagger = [a < config.num_taggers for a in range(n)]
        self.x = [[0.0] * n for _ in range(num_envs)]
        self.y = [[0.0] * n for _ in range(num_envs)]
        self.speed = [[0.0] * n for _ in range(num_envs)]
        self.dir = [[0.0] * n for _ in range(num_envs)]
        self.active = [[True] * n for _ in range(num_envs)]
        self.step_count = [0] * num_envs
        self.episode = [0] * num_envs
        self.done = [False] * num_envs
        self.obs = np.zeros((num_envs, n, config.obs_dim), dtype=np.float32)
        self.rewards = np.zeros((num_envs, n), dtype=np.float32)
        self.tag_log: list[tuple[int, int, int]] = []  # (env, tagger, runner) for the last step
        for e in range(num_envs):
            self._place(e)
            self._observe(e)

    # -- lifecycle ------------------------------------------------------------

    def _place(self, e: int) -> None:
        c = self.config
        ep = self.episode[e]
        for a in range(self.n):
            ux = uniform(SampleKey(self.pseed, ep, e, a, 0, 0))
            uy = uniform(SampleKey(self.pseed, ep, e, a, 0, 1))
            if c.continuous:
                self.x[e][a] = f32(ux * c.world_length)
                self.y[e][a] = f32(uy * c.world_length)
                self.dir[e][a] = ref_wrap(uniform(SampleKey(self.pseed, ep, e, a, 0, 2)) * TWO_PI)
                self.speed[e][a] = 0.0
            else:
                self.x[e][a] = float(min(int(ux * c.grid_size), c.grid_size - 1))
                self.y[e][a] = float(min(int(uy * c.grid_size), c.grid_size - 1))
            self.active[e][a] = True

    def reset(self, env_ids) -> None:
        for e in env_ids:
            self.episode[e] += 1
            self.step_count[e] = 0
            self.done[e] = False
            self._place(e)
            self.rewards[e] = 0.0
            self._observe(e)

    def auto_reset(self) -> list[int]:
        ids = [e for e in range(self.num_envs) if self.done[e]]
        self.reset(ids)
        return ids

    # -- dynamics -------------------------------------------------------------

    def sample(self, logits: np.ndarray, step: int, seed: int) -> np.ndarray:
        e_n, n, cats, _ = logits.shape
        out = np.zeros((e_n, n, cats), dtype=np.int32)
        for e in range(e_n):
            for a in range(n):
                for c in range(cats):
                    u = uniform(SampleKey(seed, step, e, a, c, 0))
                    out[e, a, c] = sample_reference(logits[e, a, c].tolist(), u)
        return out

    def step(self, actions: np.ndarray):
        """Advance every live env; returns (observations, rewards, done)."""
        c = self.config
        tag_log = []
        for e in range(self.num_envs):
            if self.done[e]:
                self.rewards[e] = 0.0
                continue
            self._move(e, actions[e])
            credits, tagged = self._resolve(e, tag_log)
            for a in range(self.n):
                if self.is_tagger[a]:
                    self.rewards[e, a] = credits[a] * c.tag_reward
                elif tagged[a]:
                    self.rewards[e, a] = c.tagged_penalty
                else:
                    self.rewards[e, a] = 0.0
            self._observe(e)
        self.tag_log = tag_log
        return self.obs, self.rewards, np.array(self.done, dtype=np.bool_)

    def _move(self, e: int, acts) -> None:
        c = self.config
        for a in range(self.n):
            if not self.active[e][a]:
                continue
            if c.continuous:
                accel, turn = int(acts[a][0]), int(acts[a][1])
                ms = c.max_speed(self.is_tagger[a])
                d = ref_wrap(self.dir[e][a] + (turn - 1) * c.turn_delta)
                s = f32(min(max(self.speed[e][a] + (accel - 1) * c.accel_delta, 0.0), ms))
                self.x[e][a] = f32(min(max(self.x[e][a] + s * math.cos(d), 0.0), c.world_length))
                self.y[e][a] = f32(min(max(self.y[e][a] + s * math.sin(d), 0.0), c.world_length))
                self.speed[e][a] = s
                self.dir[e][a] = d
            else:
                nx, ny = ref_move_discrete(int(acts[a][0]), int(self.x[e][a]), int(self.y[e][a]), c.grid_size)
                self.x[e][a] = float(nx)
                self.y[e][a] = float(ny)

    def _resolve(self, e: int, tag_log: list):
        self.step_count[e] += 1
        credits = [0] * self.n
        tagged = [False] * self.n
        r2 = self.radius * self.radius
        xs, ys = self.x[e], self.y[e]
        taggers = [t for t in range(self.n) if self.is_tagger[t] and self.active[e][t]]
        left = 0
        for r in range(self.n):
            if self.is_tagger[r] or not self.active[e][r]:
                continue
            hits = []
            for t in taggers:
                dx = xs[t] - xs[r]
                dy = ys[t] - ys[r]
                d2 = dx * dx + dy * dy
                if d2 <= r2:
                    hits.append((d2, t))
            if hits:
                _, t = min(hits)
                self.active[e][r] = False
                tagged[r] = True
                credits[t] += 1
                tag_log.append((e, t, r))
            else:
                left += 1
        self.done[e] = self.step_count[e] >= self.config.episode_length or left == 0
        return credits, tagged

    def neighbors(self, e: int, a: int) -> list[int]:
        """Observed agent ids of ``a`` in observation order."""
        if self.config.obs_mode != PARTIAL:
            return [j for j in range(self.n) if j != a]
        others = [j for j in range(self.n) if j != a]
        xs, ys = self.x[e], self.y[e]

        def dist(j):
            dx = xs[j] - xs[a]
            dy = ys[j] - ys[a]
            return (dx * dx + dy * dy, j)

        return sorted(others, key=dist)[: self.config.k_nearest]

    def _observe(self, e: int) -> None:
        c = self.config
        w = c.world_size
        t_norm = self.step_count[e] / float(c.episode_length)
        for a in range(self.n):
            if not self.active[e][a]:
                self.obs[e, a] = 0.0
                continue
            xi, yi = self.x[e][a], self.y[e][a]
            row = []
            width = c.neighbor_features
            for j in self.neighbors(e, a):
                row += [(self.x[e][j] - xi) / w, (self.y[e][j] - yi) / w,
                        1.0 if self.is_tagger[j] else 0.0, 1.0 if self.active[e][j] else 0.0]
                if c.continuous:
                    d = self.dir[e][j]
                    row += [self.speed[e][j] / c.max_speed(self.is_tagger[j]), math.sin(d), math.cos(d)]
            row += [xi / w, yi / w]
            if c.continuous:
                d = self.dir[e][a]
                row += [self.speed[e][a] / c.max_speed(self.is_tagger[a]), math.sin(d), math.cos(d)]
            row.append(t_norm)
            self.obs[e, a] = row

    # -- views --------------------------------------------------------------

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.x, dtype=np.float32), np.array(self.y, dtype=np.float32)

    def active_flags(self) -> np.ndarray:
        return np.array(self.active, dtype=np.bool_)
