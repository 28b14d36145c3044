"""Phase-barriered parallel stepping over environment replicas.

A step is an ordered list of phases.  Within a phase, environments are split
into contiguous ranges and handed to worker threads; all workers join before
the next phase starts.  Kernels loop agents in ascending order inside each
environment and never reduce across environments, so results do not depend on
how many workers ran them.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data_store import DataStore

PER_AGENT = "agent"
PER_ENV = "env"

# write owners
OWN = "self"  # the (env, agent) slice of the running agent
ENV = "env"  # the whole env row
OTHER = "other"  # slices of other agents

OK = -1

Kernel = Callable[[DataStore, np.ndarray, int], Optional[int]]


class StepFailure(RuntimeError):
    def __init__(self, phase: str, env_id: int | None, agent_id: int | None, cause: str = ""):
        self.phase = phase
        self.env_id = env_id
        self.agent_id = agent_id
        self.cause = cause
        super().__init__(f"phase {phase!r} failed at env={env_id} agent={agent_id}: {cause}")


class KernelPanic(RuntimeError):
    """Raised from inside a Python kernel to report the failing coordinates."""

    def __init__(self, env_id: int, agent_id: int | None = None, message: str = ""):
        self.env_id = env_id
        self.agent_id = agent_id
        super().__init__(message or f"panic at env={env_id} agent={agent_id}")


@dataclass(frozen=True)
class Write:
    array: str
    owner: str = OWN


@dataclass(frozen=True)
class Phase:
    """One barrier-delimited stage.

    ``kernel(store, env_ids, step)`` processes the given environments and
    returns ``None``/``-1`` on success or ``env * num_agents + agent`` of the
    first failing agent.
    """

    name: str
    granularity: str
    kernel: Kernel
    writes: tuple[Write, ...] = ()


@dataclass
class PhasePlan:
    phases: list[Phase] = field(default_factory=list)
    name: str = "plan"

    def __iter__(self):
        return iter(self.phases)

    def __len__(self):
        return len(self.phases)


@dataclass(frozen=True)
class EngineConfig:
    num_envs: int = 60
    num_agents: int = 12
    worker_count: int = 1
    deterministic: bool = True

    def __post_init__(self):
        if self.worker_count < 1 or self.num_envs < 1 or self.num_agents < 1:
            raise ValueError("worker_count, num_envs and num_agents must be >= 1")
        if not self.deterministic:
            raise ValueError("only deterministic execution is supported")


def validate(plan: PhasePlan, store: DataStore | None = None) -> list[str]:
    diagnostics = []
    if not plan.phases:
        return ["no phases"]
    seen = set()
    for phase in plan.phases:
        if phase.name in seen:
            diagnostics.append(f"{phase.name}: duplicate phase name")
        seen.add(phase.name)
        if phase.granularity not in (PER_AGENT, PER_ENV):
            diagnostics.append(f"{phase.name}: unknown granularity {phase.granularity!r}")
            continue
        if not callable(phase.kernel):
            diagnostics.append(f"{phase.name}: kernel is not callable")
        for w in phase.writes:
            if w.owner not in (OWN, ENV, OTHER):
                diagnostics.append(f"{phase.name}: unknown owner {w.owner!r} for {w.array}")
            elif phase.granularity == PER_AGENT and w.owner != OWN:
                diagnostics.append(
                    f"{phase.name}: ownership violation, per-agent phase writes "
                    f"{w.array!r} outside its own slice ({w.owner})"
                )
            elif phase.granularity == PER_ENV and w.owner == OTHER:
                diagnostics.append(f"{phase.name}: ownership violation on {w.array!r}")
            if store is not None:
                if w.array not in store:
                    diagnostics.append(f"{phase.name}: writes unknown array {w.array!r}")
                elif phase.granularity == PER_AGENT and (
                    len(store.spec(w.array).shape) < 2
                ):
                    diagnostics.append(
                        f"{phase.name}: ownership violation, per-agent phase writes "
                        f"per-env array {w.array!r}"
                    )
    return diagnostics


def split_ranges(n: int, parts: int) -> list[np.ndarray]:
    parts = max(1, min(parts, n))
    return [chunk for chunk in np.array_split(np.arange(n, dtype=np.int64), parts) if chunk.size]


@dataclass
class RolloutHooks:
    """Per-step callbacks, invoked in declaration order around ``run_step``."""

    policy_forward: Callable[[DataStore, int], None] | None = None
    sample: Callable[[DataStore, int], None] | None = None
    on_reward: Callable[[DataStore, int], None] | None = None
    done_check: Callable[[DataStore], Sequence[int]] | None = None
    auto_reset: Callable[[DataStore, Sequence[int]], None] | None = None


class StepEngine:
    def __init__(self, config: EngineConfig):
        self.config = config
        self._pool: ThreadPoolExecutor | None = None

    @property
    def worker_count(self) -> int:
        return self.config.worker_count

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def map_envs(self, fn: Callable[[np.ndarray], object], num_envs: int) -> list:
        """Run ``fn(env_ids)`` over env ranges and join; results in range order."""
        chunks = split_ranges(num_envs, self.worker_count)
        if len(chunks) == 1:
            return [fn(chunks[0])]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(self.worker_count, thread_name_prefix="warp")
        return list(self._pool.map(fn, chunks))

    def run_step(self, plan: PhasePlan, store: DataStore, step_index: int) -> None:
        if not store.locked:
            raise RuntimeError("store must be locked before stepping")
        for phase in plan.phases:
            self._run_phase(phase, store, step_index)

    def _run_phase(self, phase: Phase, store: DataStore, step_index: int) -> None:
        def work(env_ids: np.ndarray):
            try:
                return phase.kernel(store, env_ids, step_index)
            except KernelPanic as exc:
                return (exc.env_id, exc.agent_id, str(exc))
            except Exception as exc:  # noqa: BLE001 - reported with coordinates
                env = int(env_ids[0]) if env_ids.size == 1 else None
                return (env, None, f"{type(exc).__name__}: {exc}")

        results = self.map_envs(work, store.num_envs)
        # the barrier: every range has finished before we look at results
        for res in results:
            if res is None:
                continue
            if isinstance(res, tuple):
                raise StepFailure(phase.name, *res)
            code = int(res)
            if code != OK:
                env, agent = divmod(code, store.num_agents)
                raise StepFailure(phase.name, env, agent, "kernel reported failure")

    def run_rollout(
        self,
        plan: PhasePlan,
        store: DataStore,
        horizon: int,
        hooks: RolloutHooks | None = None,
        start_step: int = 0,
    ) -> int:
        """Run ``horizon`` steps; returns the next step index."""
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        hooks = hooks or RolloutHooks()
        for t in range(start_step, start_step + horizon):
            if hooks.policy_forward:
                hooks.policy_forward(store, t)
            if hooks.sample:
                hooks.sample(store, t)
            self.run_step(plan, store, t)
            if hooks.on_reward:
                hooks.on_reward(store, t)
            ids = hooks.done_check(store) if hooks.done_check else ()
            if hooks.auto_reset:
                hooks.auto_reset(store, ids)
        return start_step + horizon


def default_workers() -> int:
    env = os.environ.get("WARP_WORKERS")
    if env:
        return max(1, int(env))
    return 1
