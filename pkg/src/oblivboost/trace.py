"""Modeled memory-access tracing at cache-line granularity.

Obliviousness in this package is certified against a *modeled* trace:
every read or write of a :class:`TracedArray` appends one event per
touched 64-byte line. Two computations over the same public shape must
produce exactly equal traces, whatever secret values they handle.

Recording only happens while a recorder is active (see
:func:`capture_trace`); outside a capture the fast kernel backends run
with no instrumentation at all.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterator, NamedTuple, TypeVar

import numpy as np

LINE_BYTES = 64
ELEM_BYTES = 8  # traced arrays hold 8-byte elements only (f64 / i64)
ELEMS_PER_LINE = LINE_BYTES // ELEM_BYTES

T = TypeVar("T")


class TraceEvent(NamedTuple):
    kind: str  # "R" or "W"
    region: int
    line: int


class AccessTrace:
    """Ordered sequence of modeled memory events; equality is exact."""

    __slots__ = ("events",)

    def __init__(self, events: tuple[TraceEvent, ...] = ()):
        self.events = tuple(events)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AccessTrace):
            return NotImplemented
        return self.events == other.events

    def __hash__(self) -> int:
        return hash(self.events)

    def __repr__(self) -> str:
        return f"AccessTrace({len(self.events)} events)"

    def first_divergence(self, other: "AccessTrace") -> int | None:
        """Index of the first differing event, or None if traces are equal.

        If one trace is a strict prefix of the other, the divergence index
        is the length of the shorter trace.
        """
        for i, (a, b) in enumerate(zip(self.events, other.events)):
            if a != b:
                return i
        if len(self.events) != len(other.events):
            return min(len(self.events), len(other.events))
        return None


class TraceRecorder:
    """Collects events for one single-threaded traced computation."""

    def __init__(self):
        self.events: list[TraceEvent] = []
        self._next_region = 0

    def register_region(self) -> int:
        region = self._next_region
        self._next_region += 1
        return region

    def record(self, kind: str, region: int, line: int) -> None:
        self.events.append(TraceEvent(kind, region, line))

    def trace(self) -> AccessTrace:
        return AccessTrace(tuple(self.events))


_active = threading.local()


def active_recorder() -> TraceRecorder | None:
    return getattr(_active, "recorder", None)


def capture_trace(computation: Callable[[], T]) -> tuple[T, AccessTrace]:
    """Run ``computation`` with a fresh recorder; return (result, trace).

    All TracedArrays created inside the computation are bound to the
    recorder. Captures do not nest.
    """
    if active_recorder() is not None:
        raise RuntimeError("capture_trace does not nest")
    recorder = TraceRecorder()
    _active.recorder = recorder
    try:
        result = computation()
    finally:
        _active.recorder = None
    return result, recorder.trace()


class TracedArray:
    """Contiguous fixed-width array whose accesses are (optionally) traced.

    Backed by a 1-D numpy array of float64 or int64. When created while a
    recorder is active, every element access records one event for the
    64-byte line it lives on; otherwise accesses are plain. Construction
    itself is modeled as public setup and records nothing.
    """

    __slots__ = ("data", "recorder", "region")

    def __init__(self, data: np.ndarray, recorder: TraceRecorder | None = None):
        data = np.ascontiguousarray(data)
        if data.ndim != 1:
            raise ValueError("TracedArray is one-dimensional")
        if data.dtype not in (np.dtype(np.float64), np.dtype(np.int64)):
            raise ValueError(f"unsupported dtype {data.dtype}")
        self.data = data
        self.recorder = recorder if recorder is not None else active_recorder()
        self.region = self.recorder.register_region() if self.recorder else -1

    @classmethod
    def zeros(cls, n: int, dtype=np.float64) -> "TracedArray":
        return cls(np.zeros(n, dtype=dtype))

    @classmethod
    def full(cls, n: int, value, dtype=np.float64) -> "TracedArray":
        return cls(np.full(n, value, dtype=dtype))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def num_lines(self) -> int:
        return -(-self.n * ELEM_BYTES // LINE_BYTES)

    @property
    def traced(self) -> bool:
        return self.recorder is not None

    def _record(self, kind: str, line: int) -> None:
        if self.recorder is not None:
            self.recorder.record(kind, self.region, line)

    def read(self, i: int):
        """Read element i (public index); returns a python scalar."""
        self._record("R", i // ELEMS_PER_LINE)
        return self.data[i].item()

    def write(self, i: int, value) -> None:
        self._record("W", i // ELEMS_PER_LINE)
        self.data[i] = value

    def read_line(self, line: int) -> np.ndarray:
        """Read one whole 64-byte line; one event regardless of width."""
        self._record("R", line)
        lo = line * ELEMS_PER_LINE
        return self.data[lo : lo + ELEMS_PER_LINE]

    def write_line(self, line: int, values) -> None:
        self._record("W", line)
        lo = line * ELEMS_PER_LINE
        self.data[lo : lo + ELEMS_PER_LINE] = values
