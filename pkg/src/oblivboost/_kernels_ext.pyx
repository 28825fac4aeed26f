# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled oblivious kernels.

Every loop runs a fixed schedule determined by array shapes; secret
values steer only register-level arithmetic selects, never control flow
or addressing. No instrumentation is compiled in.
"""

from libc.stdint cimport int64_t, uint64_t
from libc.string cimport memcpy

import numpy as np

BACKEND = "ext"


cdef inline double _dsel(int64_t c, double a, double b) noexcept nogil:
    cdef uint64_t ua, ub, m, r
    cdef double out
    memcpy(&ua, &a, 8)
    memcpy(&ub, &b, 8)
    m = <uint64_t> (-c)
    r = (ua & m) | (ub & ~m)
    memcpy(&out, &r, 8)
    return out


cdef inline int64_t _isel(int64_t c, int64_t a, int64_t b) noexcept nogil:
    cdef int64_t m = -c
    return (a & m) | (b & ~m)


def bitonic_sort_f64(double[::1] keys, double[:, ::1] payloads):
    cdef Py_ssize_t m = keys.shape[0]
    cdef Py_ssize_t npay = payloads.shape[0]
    cdef Py_ssize_t size = 2, j, i, l, r
    cdef int64_t asc, swap
    cdef double a, b
    with nogil:
        while size <= m:
            j = size // 2
            while j >= 1:
                for i in range(m):
                    l = i ^ j
                    if l > i:
                        asc = <int64_t> ((i & size) == 0)
                        a = keys[i]
                        b = keys[l]
                        swap = _isel(asc, <int64_t> (b < a), <int64_t> (a < b))
                        keys[i] = _dsel(swap, b, a)
                        keys[l] = _dsel(swap, a, b)
                        for r in range(npay):
                            a = payloads[r, i]
                            b = payloads[r, l]
                            payloads[r, i] = _dsel(swap, b, a)
                            payloads[r, l] = _dsel(swap, a, b)
                j //= 2
            size *= 2


def bitonic_sort_i64(int64_t[::1] keys):
    cdef Py_ssize_t m = keys.shape[0]
    cdef Py_ssize_t size = 2, j, i, l
    cdef int64_t asc, swap, a, b
    with nogil:
        while size <= m:
            j = size // 2
            while j >= 1:
                for i in range(m):
                    l = i ^ j
                    if l > i:
                        asc = <int64_t> ((i & size) == 0)
                        a = keys[i]
                        b = keys[l]
                        swap = _isel(asc, <int64_t> (b < a), <int64_t> (a < b))
                        keys[i] = _isel(swap, b, a)
                        keys[l] = _isel(swap, a, b)
                j //= 2
            size *= 2


def oaccess_read_f64(double[::1] a, Py_ssize_t i):
    cdef Py_ssize_t k, n = a.shape[0]
    cdef double acc = 0.0
    with nogil:
        for k in range(n):
            acc = _dsel(<int64_t> (k == i), a[k], acc)
    return acc


def oaccess_read_i64(int64_t[::1] a, Py_ssize_t i):
    cdef Py_ssize_t k, n = a.shape[0]
    cdef int64_t acc = 0
    with nogil:
        for k in range(n):
            acc = _isel(<int64_t> (k == i), a[k], acc)
    return acc


def oaccess_write_f64(double[::1] a, Py_ssize_t i, double value):
    cdef Py_ssize_t k, n = a.shape[0]
    with nogil:
        for k in range(n):
            a[k] = _dsel(<int64_t> (k == i), value, a[k])


def oaccess_write_i64(int64_t[::1] a, Py_ssize_t i, int64_t value):
    cdef Py_ssize_t k, n = a.shape[0]
    with nogil:
        for k in range(n):
            a[k] = _isel(<int64_t> (k == i), value, a[k])


def binned_matrix(double[:, ::1] X, double[:, ::1] edges,
                  int64_t[:, ::1] interior, int64_t[:, ::1] out):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], slots = edges.shape[1]
    cdef Py_ssize_t i, f, k
    cdef int64_t acc
    cdef double x
    with nogil:
        for i in range(n):
            for f in range(d):
                x = X[i, f]
                acc = 0
                for k in range(slots):
                    acc += (<int64_t> (x >= edges[f, k])) * interior[f, k]
                out[i, f] = acc


def hist_build_level(int64_t[:, ::1] binned, int64_t[::1] markers,
                     int64_t[::1] gq, int64_t[::1] hq,
                     int64_t[::1] hg, int64_t[::1] hh, int64_t[::1] hc,
                     Py_ssize_t m, Py_ssize_t d, Py_ssize_t b):
    cdef Py_ssize_t n = markers.shape[0], db = d * b
    scratch = np.zeros((3, db), dtype=np.int64)
    cdef int64_t[:, ::1] loc = scratch
    cdef Py_ssize_t i, nd, e, f, s, base
    cdef int64_t sel, node, bv, c, g, h
    with nogil:
        for i in range(n):
            node = markers[i]
            g = gq[i]
            h = hq[i]
            for e in range(db):
                loc[0, e] = 0
                loc[1, e] = 0
                loc[2, e] = 0
            # fetch the owning block while scanning every block
            for nd in range(m):
                sel = <int64_t> (nd == node)
                base = nd * db
                for e in range(db):
                    loc[0, e] = _isel(sel, hg[base + e], loc[0, e])
                    loc[1, e] = _isel(sel, hh[base + e], loc[1, e])
                    loc[2, e] = _isel(sel, hc[base + e], loc[2, e])
            # update one bin per feature
            for f in range(d):
                bv = binned[i, f]
                for s in range(b):
                    c = <int64_t> (s == bv)
                    loc[0, f * b + s] += c * g
                    loc[1, f * b + s] += c * h
                    loc[2, f * b + s] += c
            # write back, rewriting every block
            for nd in range(m):
                sel = <int64_t> (nd == node)
                base = nd * db
                for e in range(db):
                    hg[base + e] = _isel(sel, loc[0, e], hg[base + e])
                    hh[base + e] = _isel(sel, loc[1, e], hh[base + e])
                    hc[base + e] = _isel(sel, loc[2, e], hc[base + e])


def partition_level(int64_t[::1] markers, int64_t[:, ::1] binned,
                    int64_t[::1] feats, int64_t[::1] cuts):
    cdef Py_ssize_t n = markers.shape[0], m = feats.shape[0], d = binned.shape[1]
    cdef Py_ssize_t i, nd, f
    cdef int64_t node, fsel, csel, sel, bv
    with nogil:
        for i in range(n):
            node = markers[i]
            fsel = 0
            csel = 0
            for nd in range(m):
                sel = <int64_t> (nd == node)
                fsel = _isel(sel, feats[nd], fsel)
                csel = _isel(sel, cuts[nd], csel)
            bv = 0
            for f in range(d):
                bv = _isel(<int64_t> (f == fsel), binned[i, f], bv)
            markers[i] = 2 * node + (<int64_t> (bv > csel))


def predict_margins(double[:, ::1] X, int64_t[:, ::1] feats, double[:, ::1] thrs,
                    double[:, ::1] wts, Py_ssize_t depth, double[::1] out):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], ntrees = feats.shape[0]
    cdef Py_ssize_t i, t, level, nd, f, base, width
    cdef int64_t idx, sel, nodef
    cdef double nodet, xv, w, s
    with nogil:
        for i in range(n):
            s = out[i]
            for t in range(ntrees):
                idx = 0
                base = 0
                width = 1
                for level in range(depth):
                    nodef = 0
                    nodet = 0.0
                    for nd in range(width):
                        sel = <int64_t> (nd == idx)
                        nodef = _isel(sel, feats[t, base + nd], nodef)
                        nodet = _dsel(sel, thrs[t, base + nd], nodet)
                    xv = 0.0
                    for f in range(d):
                        xv = _dsel(<int64_t> (f == nodef), X[i, f], xv)
                    idx = 2 * idx + (<int64_t> (xv >= nodet))
                    base += width
                    width *= 2
                w = 0.0
                for nd in range(width):
                    w = _dsel(<int64_t> (nd == idx), wts[t, base + nd], w)
                s += w
            out[i] = s


def margin_update(int64_t[::1] markers, double[::1] weights, double[::1] margins):
    cdef Py_ssize_t n = markers.shape[0], m = weights.shape[0]
    cdef Py_ssize_t i, nd
    cdef int64_t node
    cdef double w
    with nogil:
        for i in range(n):
            node = markers[i]
            w = 0.0
            for nd in range(m):
                w = _dsel(<int64_t> (nd == node), weights[nd], w)
            margins[i] = margins[i] + w
