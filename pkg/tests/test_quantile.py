"""Quantile summary construction, pruning, merging: oracle equivalence."""

import math

import numpy as np
import pytest

from oblivboost.quantile import (
    QuantileSummary,
    bin_of,
    boundaries,
    build_summary,
    edge_slots,
    merge_summaries,
    prune_summary,
)
from oblivboost.trace import TracedArray, capture_trace


def make_summary(pairs, capacity=None, feature_id=0):
    capacity = capacity if capacity is not None else len(pairs)
    vals = [p[0] for p in pairs] + [math.inf] * (capacity - len(pairs))
    ws = [p[1] for p in pairs] + [0.0] * (capacity - len(pairs))
    fl = [1.0] * len(pairs) + [0.0] * (capacity - len(pairs))
    return QuantileSummary(
        feature_id,
        TracedArray(np.array(vals)),
        TracedArray(np.array(ws)),
        TracedArray(np.array(fl)),
    )


# ---------------------------------------------------------------------------
# oracles (plain implementations of the same rules)


def oracle_build(values, weights):
    out = {}
    for v, w in zip(values, weights):
        out[v] = out.get(v, 0.0) + w
    return sorted(out.items())


def oracle_prune(pairs, b):
    count = len(pairs)
    step = -(-count // b)
    ranks = {0} | {step * k for k in range(1, b)} | {count - 1}
    return [pairs[r] for r in sorted(ranks) if 0 <= r < count]


def oracle_merge(a_pairs, b_pairs, b):
    out = {}
    for v, w in list(a_pairs) + list(b_pairs):
        out[v] = out.get(v, 0.0) + w
    return oracle_prune(sorted(out.items()), b)


# ---------------------------------------------------------------------------


def test_build_examples():
    s = build_summary(
        TracedArray(np.array([1.0, 1.0, 2.0])), TracedArray(np.array([1.0, 1.0, 1.0]))
    )
    assert s.valid_entries() == [(1.0, 2.0), (2.0, 1.0)]
    assert s.capacity == 3

    s = build_summary(TracedArray(np.array([5.0])), TracedArray(np.array([1.0])))
    assert s.valid_entries() == [(5.0, 1.0)]


def test_prune_rank_example():
    s = make_summary([(v, 1.0) for v in np.arange(10.0, 90.0, 10.0)])
    p = prune_summary(s, 4)
    assert [v for v, _ in p.valid_entries()] == [10.0, 30.0, 50.0, 70.0, 80.0]
    assert p.capacity == 5


def test_prune_underfull_keeps_all():
    p = prune_summary(make_summary([(1.0, 1.0), (2.0, 2.0), (3.0, 1.0)]), 4)
    assert [v for v, _ in p.valid_entries()] == [1.0, 2.0, 3.0]
    assert p.capacity == 5


def test_merge_example():
    a = make_summary([(1.0, 1.0), (3.0, 2.0)])
    b = make_summary([(1.0, 2.0), (2.0, 1.0)])
    m = merge_summaries(a, b, 4)
    assert m.valid_entries() == [(1.0, 3.0), (2.0, 1.0), (3.0, 2.0)]


def test_merge_with_empty_is_prune():
    a = make_summary([(1.0, 1.0), (2.0, 2.0), (7.0, 1.0)])
    empty = make_summary([], capacity=3)
    m = merge_summaries(a, empty, 4)
    p = prune_summary(make_summary([(1.0, 1.0), (2.0, 2.0), (7.0, 1.0)]), 4)
    assert m.valid_entries() == p.valid_entries()


def test_merge_feature_mismatch():
    with pytest.raises(ValueError):
        merge_summaries(make_summary([(1.0, 1.0)]), make_summary([(1.0, 1.0)], feature_id=1), 4)


def test_boundaries_and_bins():
    s = make_summary([(v, 1.0) for v in (10.0, 30.0, 50.0, 70.0, 80.0)])
    edges = boundaries(s)
    assert edges == [10.0, 30.0, 50.0, 70.0, 80.0]
    assert bin_of(29.0, edges) == 0
    assert bin_of(30.0, edges) == 1
    assert bin_of(80.0, edges) == 3  # last bin closed above
    assert bin_of(5.0, edges) == 0
    # single value: one degenerate bin
    assert bin_of(42.0, [42.0]) == 0


def test_edge_slots_interior_flags():
    s = make_summary([(v, 1.0) for v in (10.0, 30.0, 50.0, 70.0, 80.0)])
    vals, flags = edge_slots(s)
    assert vals[:5].tolist() == [10.0, 30.0, 50.0, 70.0, 80.0]
    assert flags.tolist() == [0, 1, 1, 1, 0]


def test_pipeline_oracle_equivalence():
    """build -> prune -> merge equals the plain implementation of the same
    rules, entry for entry, over randomized inputs."""
    rng = np.random.default_rng(99)
    for trial in range(500):
        na = int(rng.integers(1, 65))
        nb = int(rng.integers(1, 65))
        b = int(rng.integers(1, 17))
        va = rng.integers(0, 20, na).astype(np.float64)
        wa = rng.integers(1, 4, na).astype(np.float64)
        vb = rng.integers(0, 20, nb).astype(np.float64)
        wb = rng.integers(1, 4, nb).astype(np.float64)

        sa = prune_summary(
            build_summary(TracedArray(va.copy()), TracedArray(wa.copy())), b
        )
        sb = prune_summary(
            build_summary(TracedArray(vb.copy()), TracedArray(wb.copy())), b
        )
        got = merge_summaries(sa, sb, b).valid_entries()

        oa = oracle_prune(oracle_build(va, wa), b)
        ob = oracle_prune(oracle_build(vb, wb), b)
        want = oracle_merge(oa, ob, b)
        assert got == [(v, w) for v, w in want], (trial, got, want)


def test_weight_conservation():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 200))
        vals = rng.integers(0, 30, n).astype(np.float64)
        ws = rng.random(n) + 0.25
        s = build_summary(TracedArray(vals.copy()), TracedArray(ws.copy()))
        total = sum(w for _, w in s.valid_entries())
        assert abs(total - ws.sum()) <= 1e-9 * max(1.0, abs(ws.sum()))
    # compaction step of merge conserves weight too (merge before pruning
    # discards nothing; check via a budget large enough to keep all)
    a = make_summary([(1.0, 0.5), (2.0, 1.5)])
    b = make_summary([(1.0, 0.25), (3.0, 1.0)])
    m = merge_summaries(a, b, 16)
    assert abs(sum(w for _, w in m.valid_entries()) - 3.25) < 1e-12


def test_edges_strictly_increasing():
    rng = np.random.default_rng(17)
    for _ in range(100):
        n = int(rng.integers(1, 120))
        vals = rng.integers(0, 15, n).astype(np.float64)
        s = prune_summary(
            build_summary(TracedArray(vals.copy()), TracedArray(np.ones(n))),
            int(rng.integers(1, 12)),
        )
        edges = boundaries(s)
        assert all(x < y for x, y in zip(edges, edges[1:]))


def test_trace_independence_fixed_shape():
    def run(values_a, values_b):
        def go():
            sa = build_summary(TracedArray(np.array(values_a)), TracedArray(np.ones(6)))
            sb = build_summary(TracedArray(np.array(values_b)), TracedArray(np.ones(6)))
            pa = prune_summary(sa, 3)
            pb = prune_summary(sb, 3)
            return merge_summaries(pa, pb, 3)

        return capture_trace(go)[1]

    t1 = run([1.0, 1.0, 2.0, 9.0, 4.0, 4.0], [3.0, 3.0, 3.0, 3.0, 3.0, 3.0])
    t2 = run([6.0, 5.0, 4.0, 3.0, 2.0, 1.0], [1.0, 2.0, 1.0, 2.0, 1.0, 2.0])
    assert t1 == t2
