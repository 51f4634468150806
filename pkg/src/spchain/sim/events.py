"""Deterministic event queue ordered by ``(time, seq)``."""
from __future__ import annotations

import enum
import heapq
import json
from dataclasses import dataclass
from typing import Any, Callable, TextIO


class EventKind(str, enum.Enum):
    DELIVER = "deliver"
    TIMER = "timer"
    EPOCH_BOUNDARY = "epoch-boundary"
    DELTA_UPDATE = "delta-update"
    ADVERSARY_TRIGGER = "adversary-trigger"


@dataclass(frozen=True, slots=True)
class SimEvent:
    time: int
    seq: int
    kind: EventKind
    target: int
    payload: Any = None


class EventQueue:
    """Min-heap of callbacks; ties broken by insertion order."""

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, EventKind, int, Callable, tuple]] = []
        self._seq = 0
        self.now = 0
        self.processed = 0
        self.log: TextIO | None = None

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, time: int, kind: EventKind, target: int, fn: Callable, *args: Any) -> int:
        if time < self.now:
            raise ValueError(f"event scheduled in the past ({time} < {self.now})")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (time, seq, kind, target, fn, args))
        return seq

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def pop(self) -> SimEvent:
        time, seq, kind, target, fn, args = heapq.heappop(self._heap)
        return SimEvent(time, seq, kind, target, (fn, args))

    def run_next(self) -> None:
        time, seq, kind, target, fn, args = heapq.heappop(self._heap)
        self.now = time
        self.processed += 1
        if self.log is not None:
            self.log.write(json.dumps({"t": time, "seq": seq, "kind": kind.value, "target": target,
                                       "fn": getattr(fn, "__name__", "?")}) + "\n")
        fn(*args)
