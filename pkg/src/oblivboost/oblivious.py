"""Branch-free scalar primitives and fixed-pattern array algorithms.

Scalar operations (comparison, conditional assignment) work on plain
python ints/floats standing in for machine registers: they never branch
on secret values and record no trace events. Array operations (sorting,
indexed access) touch memory in a pattern determined only by the public
shape; on a :class:`~oblivboost.trace.TracedArray` bound to a recorder
they run an instrumented per-line path, otherwise they dispatch to the
active kernel backend.

Width discipline: integer operands are 64-bit two's complement, floats
are IEEE-754 binary64. Floats are compared through an order-preserving
bitwise transform (sign bit flipped for non-negatives, all bits inverted
for negatives) so float and integer comparison share one branch-free
path. NaN keys are rejected; -0.0 must be canonicalized to +0.0 by the
caller (the data loaders do this).
"""

from __future__ import annotations

import math
import struct
from typing import Iterator, Sequence

import numpy as np

from . import kernels
from .trace import TracedArray

U64_MASK = (1 << 64) - 1
_SIGN = 1 << 63

INT_SENTINEL = (1 << 63) - 1  # maximal sort key, pads non-power-of-two inputs
FLOAT_SENTINEL = math.inf


# ---------------------------------------------------------------------------
# Word-level transforms


def float_to_ordered(x: float) -> int:
    """Map a float to an unsigned 64-bit integer with the same ordering."""
    b = int.from_bytes(struct.pack("<d", x), "little")
    mask = ((b >> 63) * U64_MASK) | _SIGN
    return (b ^ mask) & U64_MASK


def ordered_to_float(o: int) -> float:
    mask = (((o >> 63) ^ 1) * U64_MASK) | _SIGN
    return struct.unpack("<d", ((o ^ mask) & U64_MASK).to_bytes(8, "little"))[0]


def int_to_ordered(v: int) -> int:
    return (v + _SIGN) & U64_MASK


def ordered_to_int(o: int) -> int:
    return o - _SIGN


def float_bits(x: float) -> int:
    return int.from_bytes(struct.pack("<d", x), "little")


def bits_to_float(b: int) -> float:
    return struct.unpack("<d", (b & U64_MASK).to_bytes(8, "little"))[0]


# ---------------------------------------------------------------------------
# Branch-free scalar primitives (register model: no events, no branches)


def _oless_ord(a: int, b: int) -> int:
    return ((a - b) >> 64) & 1


def _oequal_ord(a: int, b: int) -> int:
    d = a ^ b
    return 1 - (((d | -d) >> 64) & 1)


def _osel_bits(cond: int, t: int, f: int) -> int:
    m = -cond
    return (t & m) | (f & ~m)


def oless_int(a: int, b: int) -> int:
    return _oless_ord(int_to_ordered(a), int_to_ordered(b))


def ogreater_int(a: int, b: int) -> int:
    return _oless_ord(int_to_ordered(b), int_to_ordered(a))


def oequal_int(a: int, b: int) -> int:
    return _oequal_ord(a & U64_MASK, b & U64_MASK)


def oless_float(a: float, b: float) -> int:
    return _oless_ord(float_to_ordered(a), float_to_ordered(b))


def ogreater_float(a: float, b: float) -> int:
    return _oless_ord(float_to_ordered(b), float_to_ordered(a))


def oequal_float(a: float, b: float) -> int:
    return _oequal_ord(float_to_ordered(a), float_to_ordered(b))


def oselect_int(cond: int, if_true: int, if_false: int) -> int:
    """cond in {0,1}; mask selection, valid for negative ints too."""
    m = -cond
    return (if_true & m) | (if_false & ~m)


def oselect_float(cond: int, if_true: float, if_false: float) -> float:
    return bits_to_float(_osel_bits(cond, float_bits(if_true), float_bits(if_false)))


def ocompare(a, b, mode: str) -> int:
    """Branch-free comparison; mode is one of 'less', 'greater', 'equal'.

    Operands must share a kind (both float or both int).
    """
    fa, fb = isinstance(a, float), isinstance(b, float)
    assert fa == fb, "ocompare operands must share a kind"
    if fa:
        table = {"less": oless_float, "greater": ogreater_float, "equal": oequal_float}
    else:
        table = {"less": oless_int, "greater": ogreater_int, "equal": oequal_int}
    return table[mode](a, b)


def oassign(cond: int, if_true, if_false):
    """Constant-pattern conditional move: if_true when cond=1 else if_false."""
    ft, ff = isinstance(if_true, float), isinstance(if_false, float)
    assert ft == ff, "oassign operands must share a kind"
    if ft:
        return oselect_float(cond, if_true, if_false)
    return oselect_int(cond, if_true, if_false)


def oless(a, b) -> int:
    return ocompare(a, b, "less")


def ogreater(a, b) -> int:
    return ocompare(a, b, "greater")


def oequal(a, b) -> int:
    return ocompare(a, b, "equal")


# ---------------------------------------------------------------------------
# Bitonic sorting network


def next_pow2(n: int) -> int:
    m = 1
    while m < n:
        m *= 2
    return m


def bitonic_comparators(m: int) -> Iterator[tuple[int, int, bool]]:
    """Comparator schedule (lo, hi, ascending) for power-of-two m.

    The sequence is a function of m alone; ascending networks sort the
    whole array ascending. Comparator count is m*k*(k+1)/4, k = log2 m.
    """
    size = 2
    while size <= m:
        j = size // 2
        while j >= 1:
            for i in range(m):
                partner = i ^ j
                if partner > i:
                    yield i, partner, (i & size) == 0
            j //= 2
        size *= 2


def bitonic_comparator_count(m: int) -> int:
    k = m.bit_length() - 1
    return m * k * (k + 1) // 4


def _sentinel_for(arr: TracedArray):
    if arr.data.dtype == np.float64:
        return FLOAT_SENTINEL
    return INT_SENTINEL


def _padded_copy(arr: TracedArray, m: int, pad_value) -> TracedArray:
    dtype = arr.data.dtype
    scratch = TracedArray(np.empty(m, dtype=dtype))
    for i in range(arr.n):
        scratch.write(i, arr.read(i))
    for i in range(arr.n, m):
        scratch.write(i, pad_value)
    return scratch


def _traced_network(keys: TracedArray, payloads: Sequence[TracedArray]) -> None:
    is_float = keys.data.dtype == np.float64
    to_ord = float_to_ordered if is_float else int_to_ordered

    pay_float = [p.data.dtype == np.float64 for p in payloads]

    for lo, hi, ascending in bitonic_comparators(keys.n):
        ka = to_ord(keys.read(lo))
        kb = to_ord(keys.read(hi))
        if ascending:
            swap = _oless_ord(kb, ka)
        else:
            swap = _oless_ord(ka, kb)
        keys.write(lo, (ordered_to_float if is_float else ordered_to_int)(_osel_bits(swap, kb, ka)))
        keys.write(hi, (ordered_to_float if is_float else ordered_to_int)(_osel_bits(swap, ka, kb)))
        for p, pf in zip(payloads, pay_float):
            va, vb = p.read(lo), p.read(hi)
            if pf:
                p.write(lo, oselect_float(swap, vb, va))
                p.write(hi, oselect_float(swap, va, vb))
            else:
                p.write(lo, oselect_int(swap, vb, va))
                p.write(hi, oselect_int(swap, va, vb))


def osort(
    keys: TracedArray,
    payloads: Sequence[TracedArray] = (),
    pad_payload_value: float = 0.0,
) -> None:
    """Sort ``keys`` ascending in place, carrying ``payloads`` along.

    Runs a bitonic network whose comparator sequence depends only on the
    padded length. Non-power-of-two inputs are padded with maximal
    sentinel keys (padding is part of the public shape); payload pad
    slots get ``pad_payload_value``. Not stable. Float keys must not be
    NaN; payload sorts additionally require that any sentinel-valued key
    carries the canonical pad payload (true for summary dummies).
    """
    n = keys.n
    assert n >= 1
    for p in payloads:
        assert p.n == n, "payload length mismatch"
    m = next_pow2(n)

    if keys.traced or any(p.traced for p in payloads):
        if m == n:
            _traced_network(keys, payloads)
            return
        pad_key = _sentinel_for(keys)
        key_scratch = _padded_copy(keys, m, pad_key)
        pay_scratch = [_padded_copy(p, m, pad_payload_value) for p in payloads]
        _traced_network(key_scratch, pay_scratch)
        for i in range(n):
            keys.write(i, key_scratch.read(i))
        for p, s in zip(payloads, pay_scratch):
            for i in range(n):
                p.write(i, s.read(i))
        return

    backend = kernels.active()
    if m == n:
        kdata = keys.data
        pdata = [p.data for p in payloads]
    else:
        kdata = np.full(m, _sentinel_for(keys), dtype=keys.data.dtype)
        kdata[:n] = keys.data
        pdata = []
        for p in payloads:
            buf = np.full(m, pad_payload_value, dtype=p.data.dtype)
            buf[:n] = p.data
            pdata.append(buf)
    if keys.data.dtype == np.float64:
        pay2d = np.stack(pdata) if pdata else np.empty((0, m), dtype=np.float64)
        assert all(p.dtype == np.float64 for p in pdata), "float keys take float payloads"
        backend.bitonic_sort_f64(kdata, pay2d)
        for p, row in zip(payloads, pay2d[: len(payloads)]):
            p.data[:] = row[:n]
    else:
        assert not payloads, "int keys support key-only sorts"
        backend.bitonic_sort_i64(kdata)
    if m != n:
        keys.data[:] = kdata[:n]


# ---------------------------------------------------------------------------
# Oblivious array access


def oaccess_read(arr: TracedArray, i: int):
    """Return arr[i] for secret i by scanning every line exactly once."""
    assert 0 <= i < arr.n, "oaccess_read index out of range"
    if not arr.traced:
        backend = kernels.active()
        if arr.data.dtype == np.float64:
            return float(backend.oaccess_read_f64(arr.data, i))
        return int(backend.oaccess_read_i64(arr.data, i))

    is_float = arr.data.dtype == np.float64
    acc = 0
    for line in range(arr.num_lines):
        values = arr.read_line(line)
        base = line * 8
        for k in range(values.shape[0]):
            match = oequal_int(base + k, i)
            word = float_bits(float(values[k])) if is_float else int(values[k]) & U64_MASK
            acc = _osel_bits(match, word, acc)
    if is_float:
        return bits_to_float(acc)
    return (acc ^ _SIGN) - _SIGN  # branch-free signed decode


def oaccess_write(arr: TracedArray, i: int, value) -> None:
    """Set arr[i] = value for secret i; every line is read and rewritten."""
    assert 0 <= i < arr.n, "oaccess_write index out of range"
    if not arr.traced:
        backend = kernels.active()
        if arr.data.dtype == np.float64:
            backend.oaccess_write_f64(arr.data, i, float(value))
        else:
            backend.oaccess_write_i64(arr.data, i, int(value))
        return

    is_float = arr.data.dtype == np.float64
    vword = float_bits(float(value)) if is_float else int(value) & U64_MASK
    for line in range(arr.num_lines):
        values = arr.read_line(line)
        base = line * 8
        out = []
        for k in range(values.shape[0]):
            match = oequal_int(base + k, i)
            old = float_bits(float(values[k])) if is_float else int(values[k]) & U64_MASK
            word = _osel_bits(match, vword, old)
            if is_float:
                out.append(bits_to_float(word))
            else:
                out.append((word ^ _SIGN) - _SIGN)
        arr.write_line(line, out)
