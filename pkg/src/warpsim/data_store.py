"""Single in-place store of simulation state.

Every array is indexed ``[env, agent, feature...]`` with the environment as the
outermost axis, so one replica's data is contiguous.  Arrays are registered
once, the store is locked, and from then on only the contents change.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

REAL = "real"
INTEGER = "integer"
BOOLEAN = "boolean"

DTYPES = {
    REAL: np.dtype(np.float32),
    INTEGER: np.dtype(np.int32),
    BOOLEAN: np.dtype(np.bool_),
}

PLACEHOLDERS = ("observations", "sampled_actions", "rewards", "done")


class DataStoreError(Exception):
    pass


class DuplicateNameError(DataStoreError, KeyError):
    pass


class ShapeMismatchError(DataStoreError, ValueError):
    pass


class StoreLockedError(DataStoreError, RuntimeError):
    pass


class MissingPlaceholderError(DataStoreError, RuntimeError):
    pass


class UnknownArrayError(DataStoreError, KeyError):
    pass


class EnvIndexError(DataStoreError, IndexError):
    pass


@dataclass(frozen=True)
class ArraySpec:
    name: str
    shape: tuple[int, ...]
    element_kind: str = REAL
    snapshot_on_reset: bool = False

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if self.element_kind not in DTYPES:
            raise ValueError(f"unknown element kind {self.element_kind!r}")
        if not self.shape or any(d < 1 for d in self.shape):
            raise ShapeMismatchError(f"{self.name}: invalid shape {self.shape}")

    @property
    def dtype(self) -> np.dtype:
        return DTYPES[self.element_kind]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


class DataStore:
    """Named, typed, fixed-shape arrays with per-array reset snapshots.

    ``store[name]`` returns the shaped array itself (not a copy); every view
    handed out aliases the single flat buffer allocated at registration.
    """

    def __init__(self, num_envs: int, num_agents: int):
        if num_envs < 1 or num_agents < 1:
            raise ValueError("num_envs and num_agents must be positive")
        self.num_envs = int(num_envs)
        self.num_agents = int(num_agents)
        self.locked = False
        self._specs: dict[str, ArraySpec] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._snapshots: dict[str, np.ndarray] = {}

    def register_array(self, spec: ArraySpec, initial: Iterable | np.ndarray | None = None) -> None:
        if self.locked:
            raise StoreLockedError(f"cannot register {spec.name!r}: store is locked")
        if spec.name in self._specs:
            raise DuplicateNameError(spec.name)
        if spec.shape[0] != self.num_envs:
            raise ShapeMismatchError(
                f"{spec.name}: leading dimension {spec.shape[0]} != num_envs {self.num_envs}"
            )
        if initial is None:
            flat = np.zeros(spec.size, dtype=spec.dtype)
        else:
            flat = np.array(initial, dtype=spec.dtype).reshape(-1)
            if flat.size != spec.size:
                raise ShapeMismatchError(
                    f"{spec.name}: {flat.size} initial values for shape {spec.shape}"
                )
        self._specs[spec.name] = spec
        self._buffers[spec.name] = flat
        if spec.snapshot_on_reset:
            snap = flat.copy()
            snap.flags.writeable = False
            self._snapshots[spec.name] = snap

    def lock(self) -> None:
        missing = [name for name in PLACEHOLDERS if name not in self._specs]
        if missing:
            raise MissingPlaceholderError(f"missing placeholder arrays: {missing}")
        self.locked = True

    # -- access ---------------------------------------------------------

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def __getitem__(self, name: str) -> np.ndarray:
        return self.array(name)

    def names(self) -> list[str]:
        return list(self._specs)

    def spec(self, name: str) -> ArraySpec:
        try:
            return self._specs[name]
        except KeyError:
            raise UnknownArrayError(name) from None

    def array(self, name: str) -> np.ndarray:
        spec = self.spec(name)
        return self._buffers[name].reshape(spec.shape)

    def raw(self, name: str) -> np.ndarray:
        """The flat row-major buffer backing ``name``."""
        self.spec(name)
        return self._buffers[name]

    def snapshot(self, name: str) -> np.ndarray:
        spec = self.spec(name)
        if name not in self._snapshots:
            raise UnknownArrayError(f"{name} has no reset snapshot")
        return self._snapshots[name].reshape(spec.shape)

    def snapshot_names(self) -> list[str]:
        return list(self._snapshots)

    def strides(self, name: str) -> tuple[int, int]:
        """(env stride, agent stride) in elements of the flat buffer."""
        shape = self.spec(name).shape
        env_stride = int(np.prod(shape[1:])) if len(shape) > 1 else 1
        agent_stride = int(np.prod(shape[2:])) if len(shape) > 2 else 1
        return env_stride, agent_stride

    def env_slice(self, name: str, env_id: int) -> np.ndarray:
        if not self.locked:
            raise StoreLockedError("env_slice requires a locked store")
        arr = self.array(name)
        if not 0 <= env_id < self.num_envs:
            raise EnvIndexError(f"env {env_id} out of range [0, {self.num_envs})")
        return arr[env_id]

    def _check_ids(self, env_ids: Iterable[int]) -> np.ndarray:
        ids = np.asarray(sorted(set(int(e) for e in env_ids)), dtype=np.int64)
        if ids.size and (ids[0] < 0 or ids[-1] >= self.num_envs):
            raise EnvIndexError(f"env ids {ids.tolist()} out of range [0, {self.num_envs})")
        return ids

    def restore_snapshot(self, env_ids: Iterable[int]) -> None:
        if not self.locked:
            raise StoreLockedError("restore_snapshot requires a locked store")
        ids = self._check_ids(env_ids)
        if ids.size == 0:
            return
        for name, snap in self._snapshots.items():
            shape = self._specs[name].shape
            self._buffers[name].reshape(shape)[ids] = snap.reshape(shape)[ids]

    # -- debug ----------------------------------------------------------

    def dump_csv(self, name: str, path: str | Path) -> Path:
        """Write one row per env with that env's features flattened."""
        arr = self.array(name)
        rows = arr.reshape(self.num_envs, -1)
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["env"] + [f"{name}[{i}]" for i in range(rows.shape[1])])
            for env_id, row in enumerate(rows):
                writer.writerow([env_id] + [_fmt(v) for v in row])
        return path

    def nbytes(self) -> int:
        return sum(buf.nbytes for buf in self._buffers.values())

    def __repr__(self) -> str:
        state = "locked" if self.locked else "open"
        return f"DataStore(envs={self.num_envs}, agents={self.num_agents}, arrays={len(self._specs)}, {state})"


def _fmt(value) -> str:
    if isinstance(value, (np.bool_, bool)):
        return str(int(value))
    if isinstance(value, np.floating):
        return repr(float(value))
    return str(value)


def spec(name: str, shape: Sequence[int], kind: str = REAL, snapshot: bool = False) -> ArraySpec:
    return ArraySpec(name, tuple(shape), kind, snapshot)
