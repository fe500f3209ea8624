"""Append-only experience store.

Each experience is one JSON object per line::

    {"schema_version": 1, "id": "e000012", "timestamp": "2026-01-01T00:00:00+00:00",
     "task_id": "liar", "family": "classification",
     "config": {"method": ..., "model": ..., "params": {...}},
     "metrics": {"values": {"f1": 0.24, "evaluation_time": 537.0},
                 "directions": {"f1": "maximize", "evaluation_time": "minimize"}} | null,
     "failure": null | "out_of_memory" | "timeout" | "runtime_error",
     "task_features": {"template": ..., "names": [...], "values": [...]},
     "system": {"cpu_cores": 16, "cpu_freq": 3600.0, "ram_total": 35840.0, "gpu_vram": 24576.0}}

Floats are written with ``repr`` precision, so a reload is bit-exact.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Mapping

from .metafeatures import MetaFeatureVector, SystemProfile
from .space import Configuration

SCHEMA_VERSION = 1
FAILURE_KINDS = ("out_of_memory", "timeout", "runtime_error")
ET = "evaluation_time"
POSITIVE, NEGATIVE = "positive", "negative"


class StoreError(ValueError):
    pass


@dataclass(frozen=True)
class FitnessVector:
    """Named objective values with per-metric direction; always carries ``evaluation_time``."""

    values: Mapping[str, float]
    directions: Mapping[str, str]

    def __post_init__(self) -> None:
        if set(self.values) != set(self.directions):
            raise StoreError("every metric needs a direction")
        if ET not in self.values:
            raise StoreError("fitness vector must include evaluation_time")
        if self.directions[ET] != "minimize":
            raise StoreError("evaluation_time is minimized")
        for name, d in self.directions.items():
            if d not in ("maximize", "minimize"):
                raise StoreError(f"metric {name!r}: bad direction {d!r}")

    @classmethod
    def of(cls, evaluation_time: float, **quality: float) -> FitnessVector:
        """Shorthand: every keyword metric is maximized, evaluation time minimized."""
        values = {k: float(v) for k, v in quality.items()}
        values[ET] = float(evaluation_time)
        dirs = {k: "maximize" for k in quality}
        dirs[ET] = "minimize"
        return cls(values, dirs)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.values)

    @property
    def evaluation_time(self) -> float:
        return self.values[ET]

    @property
    def quality_name(self) -> str:
        for name, d in self.directions.items():
            if d == "maximize":
                return name
        raise StoreError("no maximized quality metric")

    @property
    def quality(self) -> float:
        return self.values[self.quality_name]

    def is_valid(self) -> bool:
        vals = list(self.values.values())
        return all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals) and self.evaluation_time > 0

    def to_dict(self) -> dict:
        return {"values": dict(self.values), "directions": dict(self.directions)}

    @classmethod
    def from_dict(cls, d: Mapping) -> FitnessVector:
        return cls(dict(d["values"]), dict(d["directions"]))


@dataclass(frozen=True)
class Failure:
    """A failed evaluation: its kind and the seconds it consumed before failing."""

    kind: str
    elapsed: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in FAILURE_KINDS:
            raise StoreError(f"unknown failure kind {self.kind!r}")
        if not self.elapsed >= 0:
            raise StoreError("failure elapsed time must be >= 0")


Outcome = FitnessVector | Failure


@dataclass(frozen=True)
class Experience:
    task_id: str
    family: str
    config: Configuration
    task_features: MetaFeatureVector
    system: SystemProfile
    metrics: FitnessVector | None = None
    failure: str | None = None
    id: str | None = None
    timestamp: str | None = None

    def validate(self) -> None:
        if self.failure is not None and self.failure not in FAILURE_KINDS:
            raise StoreError(f"unknown failure kind {self.failure!r}")
        has_metrics = self.metrics is not None and self.metrics.is_valid()
        if has_metrics == (self.failure is not None):
            raise StoreError("exactly one of valid metrics / failure must be set")
        if self.metrics is not None and self.failure is not None:
            raise StoreError("a failed experience carries no metrics")

    @property
    def is_positive(self) -> bool:
        return label(self) == POSITIVE

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "timestamp": self.timestamp,
            "task_id": self.task_id,
            "family": self.family,
            "config": self.config.to_dict(),
            "metrics": self.metrics.to_dict() if self.metrics is not None else None,
            "failure": self.failure,
            "task_features": self.task_features.to_dict(),
            "system": self.system.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Experience:
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise StoreError(f"unsupported schema_version {version!r}")
        return cls(
            task_id=d["task_id"],
            family=d["family"],
            config=Configuration.from_dict(d["config"]),
            task_features=MetaFeatureVector.from_dict(d["task_features"]),
            system=SystemProfile.from_dict(d["system"]),
            metrics=FitnessVector.from_dict(d["metrics"]) if d.get("metrics") is not None else None,
            failure=d.get("failure"),
            id=d.get("id"),
            timestamp=d.get("timestamp"),
        )


def label(e: Experience) -> str:
    """Positive iff the experience has metrics and every one of them is valid."""
    if e.failure is not None or e.metrics is None:
        return NEGATIVE
    return POSITIVE if e.metrics.is_valid() else NEGATIVE


class ExperienceStore:
    """Newline-delimited JSON experience file. One writer, many readers."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._count: int | None = None

    def _line_count(self) -> int:
        if self._count is None:
            self._count = sum(1 for _ in self._lines()) if self.path.exists() else 0
        return self._count

    def append(self, e: Experience, timestamp: str | None = None) -> str:
        e.validate()
        with self._lock:
            n = self._line_count()
            rid = e.id or f"e{n:07d}"
            ts = timestamp or e.timestamp or datetime.now(timezone.utc).isoformat()
            rec = replace(e, id=rid, timestamp=ts)
            line = json.dumps(rec.to_dict(), sort_keys=False, allow_nan=True)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._count = n + 1
        return rid

    def extend(self, experiences) -> list[str]:
        return [self.append(e) for e in experiences]

    def _lines(self) -> Iterator[str]:
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                # a torn final line (writer mid-append) is not part of the readable prefix
                if line.endswith("\n") and line.strip():
                    yield line

    def __iter__(self) -> Iterator[Experience]:
        if not self.path.exists():
            return iter(())
        return (Experience.from_dict(json.loads(line)) for line in self._lines())

    def __len__(self) -> int:
        self._count = None
        return self._line_count()

    def all(self) -> list[Experience]:
        return list(self)

    def query(self, family: str, exclude_task: str | None = None) -> list[Experience]:
        return [e for e in self if e.family == family and e.task_id != exclude_task]

    def families(self) -> list[str]:
        seen: dict[str, None] = {}
        for e in self:
            seen.setdefault(e.family, None)
        return list(seen)


def counts_by_label(experiences) -> dict[str, int]:
    out = {POSITIVE: 0, NEGATIVE: 0}
    for e in experiences:
        out[label(e)] += 1
    return out
