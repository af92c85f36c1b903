"""Append-only localized memory pools.

Timestamps are logical ticks from a shared counter, not wall-clock time, so
replaying the same session yields identical pools.
"""

from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterator, Mapping

from ..errors import ValidationError

POOL_IDS = (
    "decomposer_dialogue",
    "representation_dialogue",
    "task_details",
    "user_info",
    "feedback",
)
FEEDBACK_KINDS = ("environmental", "user_judgment")


@dataclass(frozen=True)
class Record:
    tick: int
    kind: str
    payload: Mapping[str, Any]

    def to_json(self) -> str:
        return json.dumps({"tick": self.tick, "kind": self.kind, "payload": dict(self.payload)},
                          sort_keys=True, default=_jsonable)


def _jsonable(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class MemoryPool:
    def __init__(self, pool_id: str, clock: Iterator[int], lock: threading.Lock):
        self.pool_id = pool_id
        self._records: list[Record] = []
        self._clock = clock
        self._lock = lock

    def append(self, kind: str, payload: Mapping[str, Any]) -> Record:
        with self._lock:
            rec = Record(next(self._clock), kind, MappingProxyType(dict(payload)))
            self._records.append(rec)
        return rec

    def records(self) -> tuple[Record, ...]:
        return tuple(self._records)

    def query(self, kind: str | None = None, since: int | None = None, until: int | None = None) -> list[Record]:
        return [r for r in self._records
                if (kind is None or r.kind == kind)
                and (since is None or r.tick >= since)
                and (until is None or r.tick <= until)]

    def __len__(self) -> int:
        return len(self._records)


@dataclass
class MemoryPools:
    """The five pools, sharing one logical clock and one append lock."""

    _pools: dict[str, MemoryPool] = field(init=False)

    def __post_init__(self):
        clock = itertools.count(1)
        lock = threading.Lock()
        self._pools = {pid: MemoryPool(pid, clock, lock) for pid in POOL_IDS}

    def __getitem__(self, pool_id: str) -> MemoryPool:
        if pool_id not in self._pools:
            raise ValidationError(f"unknown memory pool {pool_id!r}; pools are {POOL_IDS}")
        return self._pools[pool_id]

    def __iter__(self):
        return iter(self._pools.values())

    @property
    def feedback(self) -> MemoryPool:
        return self._pools["feedback"]

    def snapshot(self) -> dict[str, list[str]]:
        """All pools as JSON lines, for replay comparisons."""
        return {pid: [r.to_json() for r in pool.records()] for pid, pool in self._pools.items()}


def record_feedback(pools: MemoryPools, kind: str, payload: Mapping[str, Any]) -> Record:
    if kind not in FEEDBACK_KINDS:
        raise ValidationError(f"feedback kind must be one of {FEEDBACK_KINDS}")
    return pools.feedback.append(kind, payload)


def mean_link_rate(pools: MemoryPools) -> float | None:
    """Mean measured link rate over environmental feedback, None when there is none."""
    rates = [float(r.payload["link_rate"]) for r in pools.feedback.query(kind="environmental")
             if "link_rate" in r.payload]
    return sum(rates) / len(rates) if rates else None
