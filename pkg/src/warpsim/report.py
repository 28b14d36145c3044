"""Metrics tables written as CSV + JSON and read back losslessly."""

from __future__ import annotations

import csv
import json
import math
import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__


def version_string() -> str:
    try:
        sha = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


def core_count() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _encode(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _decode(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


@dataclass
class MetricsReport:
    mode: str
    meta: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)

    @classmethod
    def new(cls, mode: str, config_hash: str = "", seed: int = 0, **meta) -> "MetricsReport":
        base = {
            "config_hash": config_hash,
            "seed": seed,
            "version": version_string(),
            "cores": core_count(),
        }
        base.update(meta)
        return cls(mode, base)

    def add(self, **row) -> dict:
        self.rows.append(row)
        return row

    def columns(self) -> list[str]:
        cols: list[str] = []
        for row in self.rows:
            for key in row:
                if key not in cols:
                    cols.append(key)
        return cols

    def column(self, name: str) -> list:
        return [row.get(name) for row in self.rows]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        cols = self.columns()
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in self.rows:
                writer.writerow([_encode(row[c]) if c in row else "" for c in cols])
        return path

    @staticmethod
    def read_csv_rows(path: str | Path) -> list[dict]:
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            return [
                {k: _decode(v) for k, v in zip(header, line) if v != ""}
                for line in reader
            ]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "meta": self.meta, "rows": self.rows}

    def write_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(_jsonable(self.to_dict()), indent=2))
        return path

    @classmethod
    def read_json(cls, path: str | Path) -> "MetricsReport":
        data = _unjson(json.loads(Path(path).read_text()))
        return cls(data["mode"], data["meta"], data["rows"])

    def write(self, out_dir: str | Path, stem: str) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return self.write_csv(out / f"{stem}.csv"), self.write_json(out / f"{stem}.json")


def _jsonable(obj):
    # JSON has no NaN/inf; tag them so they survive the round trip
    if isinstance(obj, float) and not math.isfinite(obj):
        return {"__float__": repr(obj)}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _unjson(obj):
    if isinstance(obj, dict):
        if set(obj) == {"__float__"}:
            return float(obj["__float__"])
        return {k: _unjson(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unjson(v) for v in obj]
    return obj
