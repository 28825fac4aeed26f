"""Numpy kernel backend.

Fallback used when the compiled extension is unavailable. Produces
bit-identical results to the extension (integer accumulation, bit-level
selects, identical comparator schedules); the heavy per-sample loops are
vectorized, so unlike the extension some of them use gather/scatter
internally. The modeled-trace path in the library, not this module, is
what certifies access patterns.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def bitonic_sort_f64(keys: np.ndarray, payloads: np.ndarray) -> None:
    m = keys.shape[0]
    idx = np.arange(m)
    size = 2
    while size <= m:
        j = size // 2
        while j >= 1:
            lo = idx[(idx ^ j) > idx]
            hi = lo ^ j
            asc = (lo & size) == 0
            a, b = keys[lo], keys[hi]
            swap = np.where(asc, b < a, a < b)
            keys[lo] = np.where(swap, b, a)
            keys[hi] = np.where(swap, a, b)
            for r in range(payloads.shape[0]):
                pa, pb = payloads[r, lo], payloads[r, hi]
                payloads[r, lo] = np.where(swap, pb, pa)
                payloads[r, hi] = np.where(swap, pa, pb)
            j //= 2
        size *= 2


def bitonic_sort_i64(keys: np.ndarray) -> None:
    m = keys.shape[0]
    idx = np.arange(m)
    size = 2
    while size <= m:
        j = size // 2
        while j >= 1:
            lo = idx[(idx ^ j) > idx]
            hi = lo ^ j
            asc = (lo & size) == 0
            a, b = keys[lo], keys[hi]
            swap = np.where(asc, b < a, a < b)
            keys[lo] = np.where(swap, b, a)
            keys[hi] = np.where(swap, a, b)
            j //= 2
        size *= 2


def oaccess_read_f64(a: np.ndarray, i: int) -> float:
    sel = np.arange(a.shape[0]) == i
    word = np.bitwise_or.reduce(np.where(sel, a.view(np.int64), np.int64(0)))
    return float(np.int64(word).view(np.float64))


def oaccess_read_i64(a: np.ndarray, i: int) -> int:
    sel = np.arange(a.shape[0]) == i
    return int(np.bitwise_or.reduce(np.where(sel, a, np.int64(0))))


def oaccess_write_f64(a: np.ndarray, i: int, value: float) -> None:
    sel = np.arange(a.shape[0]) == i
    a[:] = np.where(sel, np.float64(value), a)


def oaccess_write_i64(a: np.ndarray, i: int, value: int) -> None:
    sel = np.arange(a.shape[0]) == i
    a[:] = np.where(sel, np.int64(value), a)


def binned_matrix(X, edges, interior, out) -> None:
    d = X.shape[1]
    for f in range(d):
        ge = X[:, f][:, None] >= edges[f][None, :]
        out[:, f] = (ge & (interior[f][None, :] != 0)).sum(axis=1)


def hist_build_level(binned, markers, gq, hq, hg, hh, hc, m, d, b) -> None:
    hg3 = hg.reshape(m, d, b)
    hh3 = hh.reshape(m, d, b)
    hc3 = hc.reshape(m, d, b)
    ones = np.ones(markers.shape[0], dtype=np.int64)
    for f in range(d):
        idx = (markers, binned[:, f])
        np.add.at(hg3[:, f, :], idx, gq)
        np.add.at(hh3[:, f, :], idx, hq)
        np.add.at(hc3[:, f, :], idx, ones)


def partition_level(markers, binned, feats, cuts) -> None:
    n = markers.shape[0]
    f = feats[markers]
    c = cuts[markers]
    bv = binned[np.arange(n), f]
    markers[:] = 2 * markers + (bv > c)


def predict_margins(X, feats, thrs, wts, depth, out) -> None:
    n = X.shape[0]
    rows = np.arange(n)
    for t in range(feats.shape[0]):
        idx = np.zeros(n, dtype=np.int64)
        for level in range(depth):
            base = (1 << level) - 1
            nf = feats[t, base + idx]
            nt = thrs[t, base + idx]
            xv = X[rows, nf]
            idx = 2 * idx + (xv >= nt)
        out += wts[t, (1 << depth) - 1 + idx]


def margin_update(markers, weights, margins) -> None:
    margins += weights[markers]
