"""Oblivious per-feature quantile summaries for histogram bin boundaries.

A summary is a fixed-capacity list of (value, weight, valid) entries held
as parallel arrays. Dummy entries are canonical: value +inf, weight 0,
valid 0, so a plain value sort pushes them to the end and padding slots
are indistinguishable from dummies. Capacities depend only on public
inputs (sample count, bin budget), never on how many distinct values the
data happens to contain; that count lives in registers only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .oblivious import (
    oequal_float,
    oequal_int,
    oless_int,
    oselect_float,
    osort,
)
from .trace import TracedArray

DUMMY_VALUE = math.inf


@dataclass
class QuantileSummary:
    feature_id: int
    values: TracedArray
    weights: TracedArray
    valid: TracedArray  # 0.0 / 1.0 flags

    @property
    def capacity(self) -> int:
        return self.values.n

    def entries(self) -> list[tuple[float, float, int]]:
        """All slots as (value, weight, valid) tuples; fixed read pattern."""
        out = []
        for i in range(self.capacity):
            out.append(
                (self.values.read(i), self.weights.read(i), int(self.valid.read(i)))
            )
        return out

    def valid_entries(self) -> list[tuple[float, float]]:
        """Compacted (value, weight) pairs. Convenience view for callers
        outside the oblivious path (tests, the reference trainer); the
        trainer itself consumes fixed-capacity edge slots."""
        return [(v, w) for v, w, fl in self.entries() if fl]


def _sort_entries(s: QuantileSummary) -> None:
    osort(s.values, payloads=(s.weights, s.valid))


def _empty_entries(cap: int) -> tuple[TracedArray, TracedArray, TracedArray]:
    return (
        TracedArray.full(cap, DUMMY_VALUE),
        TracedArray.zeros(cap),
        TracedArray.zeros(cap),
    )


def build_summary(
    values: TracedArray, weights: TracedArray, feature_id: int = 0
) -> QuantileSummary:
    """Aggregate duplicate values into single entries, obliviously.

    Sorts the samples, then scans once: the running weight of a duplicate
    run lands in the run's last slot while earlier slots are zeroed to
    dummies, and a final sort pushes the dummies to the end. Output
    capacity equals the sample count.
    """
    n = values.n
    assert n >= 1
    assert weights.n == n
    osort(values, payloads=(weights,))

    out_v, out_w, out_valid = _empty_entries(n)
    cur_v = values.read(0)
    cur_w = weights.read(0)
    for i in range(1, n):
        v = values.read(i)
        w = weights.read(i)
        same = oequal_float(v, cur_v)
        out_v.write(i - 1, oselect_float(same, DUMMY_VALUE, cur_v))
        out_w.write(i - 1, oselect_float(same, 0.0, cur_w))
        out_valid.write(i - 1, oselect_float(same, 0.0, 1.0))
        cur_w = oselect_float(same, cur_w + w, w)
        cur_v = v
    out_v.write(n - 1, cur_v)
    out_w.write(n - 1, cur_w)
    out_valid.write(n - 1, 1.0)

    summary = QuantileSummary(feature_id, out_v, out_w, out_valid)
    _sort_entries(summary)
    return summary


def prune_summary(s: QuantileSummary, b: int) -> QuantileSummary:
    """Select entries at positional ranks 0, ceil(V/b)*k, V-1 among the V
    valid entries; output capacity is b+1 with dummies filling the rest.
    """
    assert b >= 1
    cap = s.capacity

    work_v, work_w, work_valid = _empty_entries(cap)
    count = 0
    for i in range(cap):
        v = s.values.read(i)
        w = s.weights.read(i)
        fl = s.valid.read(i)
        work_v.write(i, v)
        work_w.write(i, w)
        work_valid.write(i, fl)
        count += int(fl)

    step = (count + b - 1) // b
    ranks = [0] + [step * k for k in range(1, b)] + [count - 1]

    for i in range(cap):
        sel = 0
        for r in ranks:
            sel |= oequal_int(i, r)
        sel &= oless_int(i, count)
        v = work_v.read(i)
        w = work_w.read(i)
        fl = work_valid.read(i)
        work_v.write(i, oselect_float(sel, v, DUMMY_VALUE))
        work_w.write(i, oselect_float(sel, w, 0.0))
        work_valid.write(i, oselect_float(sel, fl, 0.0))

    work = QuantileSummary(s.feature_id, work_v, work_w, work_valid)
    _sort_entries(work)

    out_cap = b + 1
    out_v, out_w, out_valid = _empty_entries(out_cap)
    for i in range(min(cap, out_cap)):
        out_v.write(i, work_v.read(i))
        out_w.write(i, work_w.read(i))
        out_valid.write(i, work_valid.read(i))
    return QuantileSummary(s.feature_id, out_v, out_w, out_valid)


def merge_summaries(
    a: QuantileSummary, b_s: QuantileSummary, b: int
) -> QuantileSummary:
    """Pairwise combine: concatenate, sort, zero adjacent duplicates while
    summing their weights, sort dummies to the end, then prune with
    budget b (output capacity b+1)."""
    if a.feature_id != b_s.feature_id:
        raise ValueError("cannot merge summaries of different features")
    cap = a.capacity + b_s.capacity

    mv, mw, mvalid = _empty_entries(cap)
    for i in range(a.capacity):
        mv.write(i, a.values.read(i))
        mw.write(i, a.weights.read(i))
        mvalid.write(i, a.valid.read(i))
    for i in range(b_s.capacity):
        j = a.capacity + i
        mv.write(j, b_s.values.read(i))
        mw.write(j, b_s.weights.read(i))
        mvalid.write(j, b_s.valid.read(i))

    merged = QuantileSummary(a.feature_id, mv, mw, mvalid)
    _sort_entries(merged)

    cur_v = mv.read(0)
    cur_w = mw.read(0)
    cur_fl = mvalid.read(0)
    for i in range(1, cap):
        v = mv.read(i)
        w = mw.read(i)
        fl = mvalid.read(i)
        same = oequal_float(v, cur_v)
        mv.write(i - 1, oselect_float(same, DUMMY_VALUE, cur_v))
        mw.write(i - 1, oselect_float(same, 0.0, cur_w))
        mvalid.write(i - 1, oselect_float(same, 0.0, cur_fl))
        cur_w = oselect_float(same, cur_w + w, w)
        cur_v = v
        cur_fl = fl
    mv.write(cap - 1, cur_v)
    mw.write(cap - 1, cur_w)
    mvalid.write(cap - 1, cur_fl)

    _sort_entries(merged)
    return prune_summary(merged, b)


def boundaries(summary: QuantileSummary) -> list[float]:
    """Valid values in ascending order: the bin edges.

    Edge k opens bin k-1... more precisely, with edges e_0..e_m, bin k
    covers [e_k, e_{k+1}) and the last bin is closed above. A single edge
    degenerates to one bin holding only that value. This is the
    compacted, non-oblivious view used by tests and the reference path.
    """
    entries = summary.entries()
    return [v for v, _w, fl in entries if fl]


def bin_of(value: float, edges: list[float]) -> int:
    """Bin index of a value under the edge list; clamps outside the range."""
    if len(edges) <= 1:
        return 0
    interior = edges[1:-1]
    return sum(1 for e in interior if value >= e)


def edge_slots(summary: QuantileSummary) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-capacity export for the trainer: (edge values, interior flags).

    interior[k] = 1 iff slot k holds a valid edge that is neither the
    first nor the last valid edge; the bin index of x is the count of
    interior edges <= x. Both arrays have the summary's public capacity.
    """
    cap = summary.capacity
    vals = np.empty(cap, dtype=np.float64)
    flags = np.zeros(cap, dtype=np.int64)
    count = 0
    raw = []
    for i in range(cap):
        v = summary.values.read(i)
        fl = int(summary.valid.read(i))
        raw.append((v, fl))
        count += fl
    for i, (v, fl) in enumerate(raw):
        vals[i] = v
        if i >= 1:
            flags[i] = fl & oless_int(i, count - 1)
    return vals, flags
