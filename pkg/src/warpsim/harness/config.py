"""Strict JSON run configuration.

Four sections, each mapping onto a dataclass; unknown keys are errors::

    {
      "env":     {TagConfig fields},
      "engine":  {"num_envs": 60, "worker_count": 1},
      "trainer": {TrainerConfig fields},
      "run":     {RunSection fields}
    }

Every field is optional; omitted ones take the dataclass defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..engine import EngineConfig
from ..tag.config import TagConfig
from ..trainer import TrainerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    mode: str = "train"
    out_dir: str = "runs/default"
    # check
    check_steps: int = 100
    check_workers: tuple = (1, 2, "max")
    check_obs_modes: tuple = ("full", "partial")
    check_variants: tuple = ("discrete", "continuous")
    # bench
    env_counts: tuple = (1, 20, 60, 120)
    agent_counts: tuple = (10, 100, 1000)
    obs_modes: tuple = ("partial", "full")
    repetitions: int = 3
    bench_seconds: float = 0.5
    bench_train_iterations: int = 2
    # train
    checkpoint_every: int = 0
    resume_from: str | None = None
    trajectory: bool = False
    eval_steps: int = 0

    def __post_init__(self):
        for name in ("check_workers", "check_obs_modes", "check_variants", "env_counts",
                     "agent_counts", "obs_modes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.mode not in ("check", "bench-envs", "bench-agents", "train"):
            raise ConfigError(f"unknown run mode {self.mode!r}")
        if self.repetitions < 3:
            raise ConfigError("repetitions must be >= 3")
        if any(c < 1 for c in self.env_counts):
            raise ConfigError("env_counts must be >= 1")
        if any(c < 2 for c in self.agent_counts):
            raise ConfigError("agent_counts must be >= 2")


@dataclass(frozen=True)
class RunConfig:
    env: TagConfig = field(default_factory=TagConfig)
    engine: EngineConfig = field(default_factory=lambda: EngineConfig(num_agents=TagConfig().num_agents))
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    run: RunSection = field(default_factory=RunSection)

    def to_dict(self) -> dict:
        return {name: _plain(dataclasses.asdict(getattr(self, name)))
                for name in ("env", "engine", "trainer", "run")}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)

    def with_seed(self, seed: int) -> "RunConfig":
        return self.replace(env=dataclasses.replace(self.env, seed=seed),
                            trainer=dataclasses.replace(self.trainer, seed=seed))

    def with_workers(self, workers: int) -> "RunConfig":
        return self.replace(engine=dataclasses.replace(self.engine, worker_count=workers))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _section(cls, data: Any, name: str, **extra):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {unknown}")
    try:
        return cls(**{**extra, **data})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - {"env", "engine", "trainer", "run"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    env = _section(TagConfig, data.get("env"), "env")
    engine_data = dict(data.get("engine") or {})
    if engine_data.get("num_agents", env.num_agents) != env.num_agents:
        raise ConfigError(
            f"engine.num_agents={engine_data['num_agents']} but env has {env.num_agents} agents"
        )
    engine = _section(EngineConfig, engine_data, "engine", num_agents=env.num_agents)
    trainer = _section(TrainerConfig, data.get("trainer"), "trainer")
    run = _section(RunSection, data.get("run"), "run")
    return RunConfig(env, engine, trainer, run)


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)
