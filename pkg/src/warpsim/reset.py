"""Detect finished environments and reset them in place."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .data_store import DataStore, EnvIndexError, UnknownArrayError


@dataclass(frozen=True)
class ResetPolicy:
    auto: bool = True
    zero_on_reset: tuple[str, ...] = ("rewards", "done")
    counter: str | None = None  # per-env reseed counter bumped on every reset

    def coverage(self, store: DataStore) -> dict[str, str]:
        """How each array is treated at reset: snapshot, zero or leave."""
        snaps = set(store.snapshot_names())
        zeros = set(self.zero_on_reset)
        for name in zeros:
            if name not in store:
                raise UnknownArrayError(f"zero_on_reset names unknown array {name!r}")
            if name in snaps:
                raise ValueError(f"{name!r} is both snapshot-restored and zero-filled")
        if self.counter is not None:
            if self.counter not in store:
                raise UnknownArrayError(f"reseed counter {self.counter!r} not registered")
            if self.counter in snaps or self.counter in zeros:
                raise ValueError(f"reseed counter {self.counter!r} must be left alone")
        out = {}
        for name in store.names():
            out[name] = "snapshot" if name in snaps else "zero" if name in zeros else "leave"
        return out


def detect_done(store: DataStore) -> np.ndarray:
    return np.flatnonzero(store["done"]).astype(np.int64)


class ResetManager:
    def __init__(
        self,
        store: DataStore,
        policy: ResetPolicy = ResetPolicy(),
        reinit: Callable[[DataStore, np.ndarray], None] | None = None,
    ):
        self.store = store
        self.policy = policy
        self.reinit = reinit
        self.coverage = policy.coverage(store)
        self.resets = 0

    def detect_done(self) -> np.ndarray:
        return detect_done(self.store)

    def auto_reset(self, ids: Iterable[int]) -> None:
        store = self.store
        ids = np.asarray(sorted(set(int(i) for i in ids)), dtype=np.int64)
        if ids.size == 0:
            return
        if ids[0] < 0 or ids[-1] >= store.num_envs:
            raise EnvIndexError(f"reset ids {ids.tolist()} out of range")
        store.restore_snapshot(ids)
        for name in self.policy.zero_on_reset:
            store[name][ids] = 0
        store["done"][ids] = False
        if self.policy.counter is not None:
            store[self.policy.counter][ids] += 1
        if self.reinit is not None:
            self.reinit(store, ids)
        self.resets += int(ids.size)

    def __call__(self, store: DataStore, ids) -> None:
        """RolloutHooks.auto_reset adapter."""
        if self.policy.auto:
            self.auto_reset(ids)
