"""Order-k PPM (method C escapes, with exclusion) over a 32-bit arithmetic coder.

The context model keeps, for every context seen so far, a singly linked
list of ``(symbol, count)`` entries. A symbol is coded in the longest
context that has non-excluded entries; each failed context emits an escape
whose frequency equals its number of non-excluded distinct symbols, and
its symbols are then excluded from shorter contexts. When every context
escapes, the symbol is coded uniformly over the remaining alphabet.

Model state lives in flat arrays: an open-addressing hash from context key
to context index, per-context list heads and totals, and an entry pool.
The hot loops are compiled with numba; the public functions wrap them with
the :class:`CompressedBlob` container (see :mod:`windsr.baselines.blob`).
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import ConfigError, DecodeError

MAX_ORDER = 8
MAX_ALPHABET = 256

_STATE_BITS = 32
_FULL = np.int64(1) << _STATE_BITS
_MASK = _FULL - 1
_HALF = _FULL >> 1
_QUARTER = _HALF >> 1
# context totals are halved past this; keeps total * range far below 2**63
_RESCALE_LIMIT = 1 << 16

# coder state slots
_LOW, _HIGH, _PENDING, _BITPOS, _CODE = 0, 1, 2, 3, 4


@njit(cache=True)
def _put_bit(out, st, bit):
    pos = st[_BITPOS]
    if bit:
        out[pos >> 3] |= np.uint8(1 << (7 - (pos & 7)))
    st[_BITPOS] = pos + 1


@njit(cache=True)
def _get_bit(data, st):
    pos = st[_BITPOS]
    st[_BITPOS] = pos + 1
    if (pos >> 3) >= data.shape[0]:
        return 0
    return (data[pos >> 3] >> (7 - (pos & 7))) & 1


@njit(cache=True)
def _enc_update(out, st, lo, hi, total):
    low = st[_LOW]
    high = st[_HIGH]
    rng = high - low + 1
    high = low + hi * rng // total - 1
    low = low + lo * rng // total
    while ((low ^ high) & _HALF) == 0:
        bit = low >> (_STATE_BITS - 1)
        _put_bit(out, st, bit)
        for _ in range(st[_PENDING]):
            _put_bit(out, st, bit ^ 1)
        st[_PENDING] = 0
        low = (low << 1) & _MASK
        high = ((high << 1) & _MASK) | 1
    while (low & ~high & _QUARTER) != 0:
        st[_PENDING] += 1
        low = (low << 1) & (_MASK >> 1)
        high = ((high << 1) & (_MASK >> 1)) | _HALF | 1
    st[_LOW] = low
    st[_HIGH] = high


@njit(cache=True)
def _enc_finish(out, st):
    _put_bit(out, st, 1)


@njit(cache=True)
def _dec_init(data, st):
    st[_LOW] = 0
    st[_HIGH] = _MASK
    code = 0
    for _ in range(_STATE_BITS):
        code = (code << 1) | _get_bit(data, st)
    st[_CODE] = code


@njit(cache=True)
def _dec_value(st, total):
    rng = st[_HIGH] - st[_LOW] + 1
    offset = st[_CODE] - st[_LOW]
    return ((offset + 1) * total - 1) // rng


@njit(cache=True)
def _dec_update(data, st, lo, hi, total):
    low = st[_LOW]
    high = st[_HIGH]
    code = st[_CODE]
    rng = high - low + 1
    high = low + hi * rng // total - 1
    low = low + lo * rng // total
    while ((low ^ high) & _HALF) == 0:
        code = ((code << 1) & _MASK) | _get_bit(data, st)
        low = (low << 1) & _MASK
        high = ((high << 1) & _MASK) | 1
    while (low & ~high & _QUARTER) != 0:
        code = (code & _HALF) | ((code << 1) & (_MASK >> 1)) | _get_bit(data, st)
        low = (low << 1) & (_MASK >> 1)
        high = ((high << 1) & (_MASK >> 1)) | _HALF | 1
    st[_LOW] = low
    st[_HIGH] = high
    st[_CODE] = code


@njit(cache=True)
def _ctx_key(hist, t, k):
    key = np.int64(k)
    for i in range(1, k + 1):
        key = key * 257 + hist[t - i] + 1
    return key


@njit(cache=True)
def _lookup(keys, slots, key, create, n_ctx):
    mask = keys.shape[0] - 1
    h = (key * np.int64(0x9E3779B97F4A7C15 >> 1)) & mask
    while True:
        if slots[h] < 0:
            if not create:
                return -1, n_ctx
            keys[h] = key
            slots[h] = n_ctx
            return n_ctx, n_ctx + 1
        if keys[h] == key:
            return slots[h], n_ctx
        h = (h + 1) & mask


@njit(cache=True)
def _update_model(c, x, head, total, distinct, ent, n_ent):
    e = head[c]
    prev = -1
    while e >= 0:
        if ent[e, 0] == x:
            break
        prev = e
        e = ent[e, 2]
    if e < 0:
        e = n_ent
        n_ent += 1
        ent[e, 0] = x
        ent[e, 1] = 0
        ent[e, 2] = -1
        if prev < 0:
            head[c] = e
        else:
            ent[prev, 2] = e
        distinct[c] += 1
    ent[e, 1] += 1
    total[c] += 1
    if total[c] > _RESCALE_LIMIT:
        s = 0
        f = head[c]
        while f >= 0:
            ent[f, 1] = (ent[f, 1] + 1) >> 1
            s += ent[f, 1]
            f = ent[f, 2]
        total[c] = s
    return n_ent


def _alloc(n, order):
    n_ctx_max = order * n + 2
    size = 1
    while size < 2 * n_ctx_max:
        size <<= 1
    keys = np.zeros(size, dtype=np.int64)
    slots = np.full(size, -1, dtype=np.int64)
    head = np.full(n_ctx_max, -1, dtype=np.int64)
    total = np.zeros(n_ctx_max, dtype=np.int64)
    distinct = np.zeros(n_ctx_max, dtype=np.int64)
    n_ent_max = (order + 1) * n + 1
    # entry rows: (symbol, count, next entry)
    ent = np.full((n_ent_max, 3), -1, dtype=np.int64)
    return keys, slots, head, total, distinct, ent


@njit(cache=True)
def _encode(symbols, alphabet, order, out, keys, slots, head, total, distinct, ent):
    st = np.zeros(5, dtype=np.int64)
    st[_HIGH] = _MASK
    excl = np.full(alphabet, -1, dtype=np.int64)
    found = np.full(order + 1, -1, dtype=np.int64)
    n_ctx = 0
    n_ent = 0
    n = symbols.shape[0]
    for t in range(n):
        x = symbols[t]
        n_excl = 0
        coded = False
        found[:] = -1
        top = order if t >= order else t
        for k in range(top, -1, -1):
            c, n_ctx = _lookup(keys, slots, _ctx_key(symbols, t, k), False, n_ctx)
            found[k] = c
            if c < 0:
                continue
            tot = 0
            dist = 0
            lo = -1
            xc = 0
            e = head[c]
            # exclusions marked here only matter if this context escapes
            while e >= 0:
                s = ent[e, 0]
                if excl[s] != t:
                    if s == x:
                        lo = tot
                        xc = ent[e, 1]
                    tot += ent[e, 1]
                    dist += 1
                    excl[s] = t
                e = ent[e, 2]
            if dist == 0:
                continue
            if lo >= 0:
                _enc_update(out, st, lo, lo + xc, tot + dist)
                coded = True
                break
            _enc_update(out, st, tot, tot + dist, tot + dist)
            n_excl += dist
        if not coded:
            rank = 0
            for s in range(x):
                if excl[s] != t:
                    rank += 1
            _enc_update(out, st, rank, rank + 1, alphabet - n_excl)
        for k in range(top + 1):
            c = found[k]
            if c < 0:
                c, n_ctx = _lookup(keys, slots, _ctx_key(symbols, t, k), True, n_ctx)
            n_ent = _update_model(c, x, head, total, distinct, ent, n_ent)
    _enc_finish(out, st)
    return st[_BITPOS]


@njit(cache=True)
def _decode(data, n, alphabet, order, keys, slots, head, total, distinct, ent):
    st = np.zeros(5, dtype=np.int64)
    _dec_init(data, st)
    out = np.zeros(n, dtype=np.int64)
    excl = np.full(alphabet, -1, dtype=np.int64)
    found = np.full(order + 1, -1, dtype=np.int64)
    n_ctx = 0
    n_ent = 0
    for t in range(n):
        n_excl = 0
        x = -1
        found[:] = -1
        top = order if t >= order else t
        for k in range(top, -1, -1):
            c, n_ctx = _lookup(keys, slots, _ctx_key(out, t, k), False, n_ctx)
            found[k] = c
            if c < 0:
                continue
            tot = 0
            dist = 0
            e = head[c]
            while e >= 0:
                if excl[ent[e, 0]] != t:
                    tot += ent[e, 1]
                    dist += 1
                e = ent[e, 2]
            if dist == 0:
                continue
            v = _dec_value(st, tot + dist)
            if v < tot:
                acc = 0
                e = head[c]
                while e >= 0:
                    if excl[ent[e, 0]] != t:
                        if v < acc + ent[e, 1]:
                            break
                        acc += ent[e, 1]
                    e = ent[e, 2]
                x = ent[e, 0]
                _dec_update(data, st, acc, acc + ent[e, 1], tot + dist)
                break
            _dec_update(data, st, tot, tot + dist, tot + dist)
            e = head[c]
            while e >= 0:
                excl[ent[e, 0]] = t
                e = ent[e, 2]
            n_excl += dist
        if x < 0:
            remaining = alphabet - n_excl
            v = _dec_value(st, remaining)
            if v < 0 or v >= remaining:
                return out, False
            rank = -1
            for s in range(alphabet):
                if excl[s] != t:
                    rank += 1
                    if rank == v:
                        x = s
                        break
            _dec_update(data, st, v, v + 1, remaining)
        out[t] = x
        for k in range(top + 1):
            c = found[k]
            if c < 0:
                c, n_ctx = _lookup(keys, slots, _ctx_key(out, t, k), True, n_ctx)
            n_ent = _update_model(c, x, head, total, distinct, ent, n_ent)
    return out, True


def _check_params(alphabet: int, order: int) -> None:
    if not 2 <= alphabet <= MAX_ALPHABET:
        raise ConfigError(f"alphabet size must lie in [2, {MAX_ALPHABET}], got {alphabet}")
    if not 0 <= order <= MAX_ORDER:
        raise ConfigError(f"PPM order must lie in [0, {MAX_ORDER}], got {order}")


def encode_symbols(symbols, alphabet: int, order: int = 3) -> bytes:
    """Arithmetic-code ``symbols`` (integers in ``[0, alphabet)``) and return the raw payload."""
    _check_params(alphabet, order)
    s = np.ascontiguousarray(symbols, dtype=np.int64).ravel()
    if s.size and (s.min() < 0 or s.max() >= alphabet):
        raise ConfigError(f"symbols must lie in [0, {alphabet})")
    n = s.size
    # worst case: one escape per order (<= 17 bits each) plus ~9 bits for the fallback
    out = np.zeros(n * (order + 2) * 3 + 16, dtype=np.uint8)
    bits = _encode(s, alphabet, order, out, *_alloc(n, order))
    return out[: (bits + 7) // 8].tobytes()


def decode_symbols(payload: bytes, n: int, alphabet: int, order: int = 3) -> np.ndarray:
    """Inverse of :func:`encode_symbols`; ``n`` is the number of symbols to recover."""
    _check_params(alphabet, order)
    data = np.frombuffer(payload, dtype=np.uint8)
    out, ok = _decode(data, int(n), alphabet, order, *_alloc(int(n), order))
    if not ok:
        raise DecodeError("arithmetic decoder left the valid symbol range")
    return out
