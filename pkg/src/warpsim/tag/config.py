from __future__ import annotations

import math
from dataclasses import dataclass

DISCRETE = "discrete"
CONTINUOUS = "continuous"
FULL = "full"
PARTIAL = "partial"

# discrete moves: no-op, up (+y), down, left (-x), right
MOVES = ((0, 0), (0, 1), (0, -1), (-1, 0), (1, 0))
NOOP, UP, DOWN, LEFT, RIGHT = range(5)

# continuous: index 1 is the neutral choice for both categories
ACCEL_CHOICES = 3
TURN_CHOICES = 3


class InvalidConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TagConfig:
    variant: str = DISCRETE
    grid_size: int = 20
    world_length: float = 20.0
    num_taggers: int = 2
    num_runners: int = 10
    episode_length: int = 500
    tag_radius: float = 1.0
    obs_mode: str = FULL
    k_nearest: int = 5
    tag_reward: float = 1.0
    tagged_penalty: float = -1.0
    max_speed_tagger: float = 1.0
    max_speed_runner: float = 1.0
    accel_delta: float = 0.1
    turn_delta: float = math.pi / 6
    seed: int = 0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise InvalidConfigError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.variant not in (DISCRETE, CONTINUOUS):
            out.append(f"variant must be discrete|continuous, got {self.variant!r}")
        if self.obs_mode not in (FULL, PARTIAL):
            out.append(f"obs_mode must be full|partial, got {self.obs_mode!r}")
        if self.num_taggers < 1 or self.num_runners < 1:
            out.append("need at least one tagger and one runner")
        if self.obs_mode == PARTIAL and not 1 <= self.k_nearest < self.num_agents:
            out.append(f"k_nearest={self.k_nearest} must be in [1, {self.num_agents})")
        if self.tag_reward <= 0 or self.tagged_penalty >= 0:
            out.append("tag_reward must be > 0 and tagged_penalty < 0")
        if self.episode_length < 1:
            out.append("episode_length must be >= 1")
        if self.grid_size < 1 or self.world_length <= 0:
            out.append("world size must be positive")
        if self.tag_radius < 0:
            out.append("tag_radius must be >= 0")
        if min(self.max_speed_tagger, self.max_speed_runner) <= 0:
            out.append("max speeds must be positive")
        if self.accel_delta < 0 or self.turn_delta < 0:
            out.append("accel_delta and turn_delta must be non-negative")
        return out

    @property
    def num_agents(self) -> int:
        return self.num_taggers + self.num_runners

    @property
    def continuous(self) -> bool:
        return self.variant == CONTINUOUS

    @property
    def world_size(self) -> float:
        return float(self.world_length) if self.continuous else float(self.grid_size)

    @property
    def radius(self) -> float:
        """Tag radius in world units; co-location on the grid."""
        return float(self.tag_radius) if self.continuous else 0.0

    @property
    def action_space(self) -> tuple[int, int]:
        """(categories, choices per category)."""
        return (2, 3) if self.continuous else (1, len(MOVES))

    @property
    def neighbor_features(self) -> int:
        return 7 if self.continuous else 4

    @property
    def self_features(self) -> int:
        return 5 if self.continuous else 2

    @property
    def num_observed(self) -> int:
        return self.k_nearest if self.obs_mode == PARTIAL else self.num_agents - 1

    @property
    def obs_dim(self) -> int:
        return self.num_observed * self.neighbor_features + self.self_features + 1

    def max_speed(self, is_tagger: bool) -> float:
        return self.max_speed_tagger if is_tagger else self.max_speed_runner
