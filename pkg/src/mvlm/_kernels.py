"""numba kernels for group-quantized weights.

Weights are stored input-major with one scale per 32 consecutive columns of
a row. q8 codes are int8 ``[k, n_pad]``; the kernels read them through a
uint8 view (``code ^ 128 == code + 128``) because int8 loads defeat the
vectorizer. q4 packs row pairs: byte ``(p, j)`` holds row ``2p`` in its low
nibble and row ``2p + 1`` in its high nibble, both offset by 8, so a byte
feeds a single output column.

The GEMVs block four rows (q8) or four row pairs (q4) per pass over ``y``.
q4 unpacks in float: for a byte ``f``, ``hi = floor(f / 16)`` and
``lo = f - 16 * hi``; folding the 16 into the row coefficient leaves two
FMAs per byte and no integer shifts.
"""

import numba as nb
import numpy as np

GROUP = 32


@nb.njit(cache=True, nogil=True, fastmath=True)
def gemv_q8(x, codes, scales, y, k0, k1):
    """``y += x[k0:k1] @ W[k0:k1]`` with ``codes`` given as a uint8 view."""
    ng = scales.shape[1]
    k = k0
    while k + 4 <= k1:
        r0 = codes[k]
        r1 = codes[k + 1]
        r2 = codes[k + 2]
        r3 = codes[k + 3]
        for g in range(ng):
            a0 = x[k] * scales[k, g]
            a1 = x[k + 1] * scales[k + 1, g]
            a2 = x[k + 2] * scales[k + 2, g]
            a3 = x[k + 3] * scales[k + 3, g]
            c = np.float32(-128.0) * ((a0 + a1) + (a2 + a3))
            base = g * GROUP
            for j in range(GROUP):
                y[base + j] += ((a0 * np.float32(np.int32(r0[base + j]) ^ 128)
                                 + a1 * np.float32(np.int32(r1[base + j]) ^ 128))
                                + (a2 * np.float32(np.int32(r2[base + j]) ^ 128)
                                   + a3 * np.float32(np.int32(r3[base + j]) ^ 128))
                                + c)
        k += 4
    while k < k1:
        row = codes[k]
        for g in range(ng):
            a = x[k] * scales[k, g]
            base = g * GROUP
            for j in range(GROUP):
                y[base + j] += a * (np.float32(np.int32(row[base + j]) ^ 128) - np.float32(128.0))
        k += 1


@nb.njit(cache=True, nogil=True, fastmath=True)
def _q4_pair(x, packed, scales, y, p):
    # one row pair; the high row may be padding past the end of x
    t = np.float32(0.0625)
    k = 2 * p
    has_hi = k + 1 < x.shape[0]
    row = packed[p]
    for g in range(scales.shape[1]):
        a0 = x[k] * scales[k, g]
        a1 = x[k + 1] * scales[k + 1, g] if has_hi else np.float32(0.0)
        b0 = a1 - np.float32(16.0) * a0
        c = np.float32(-8.0) * (a0 + a1)
        base = g * GROUP
        for j in range(GROUP):
            f = np.float32(row[base + j])
            y[base + j] += a0 * f + b0 * np.floor(f * t) + c


@nb.njit(cache=True, nogil=True, fastmath=True)
def gemv_q4(x, packed, scales, y, p0, p1):
    """``y += x @ W`` over row pairs ``p0:p1`` of the packed q4 payload."""
    ng = scales.shape[1]
    t = np.float32(0.0625)
    sixteen = np.float32(16.0)
    full = x.shape[0] // 2  # pairs whose high row exists
    p = p0
    while p + 4 <= min(p1, full):
        r0 = packed[p]
        r1 = packed[p + 1]
        r2 = packed[p + 2]
        r3 = packed[p + 3]
        k = 2 * p
        for g in range(ng):
            a0 = x[k] * scales[k, g]
            a1 = x[k + 1] * scales[k + 1, g]
            a2 = x[k + 2] * scales[k + 2, g]
            a3 = x[k + 3] * scales[k + 3, g]
            a4 = x[k + 4] * scales[k + 4, g]
            a5 = x[k + 5] * scales[k + 5, g]
            a6 = x[k + 6] * scales[k + 6, g]
            a7 = x[k + 7] * scales[k + 7, g]
            b0 = a1 - sixteen * a0
            b1 = a3 - sixteen * a2
            b2 = a5 - sixteen * a4
            b3 = a7 - sixteen * a6
            c = np.float32(-8.0) * (((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7)))
            base = g * GROUP
            for j in range(GROUP):
                f0 = np.float32(r0[base + j])
                f1 = np.float32(r1[base + j])
                f2 = np.float32(r2[base + j])
                f3 = np.float32(r3[base + j])
                y[base + j] += (((a0 * f0 + b0 * np.floor(f0 * t)) + (a2 * f1 + b1 * np.floor(f1 * t)))
                                + ((a4 * f2 + b2 * np.floor(f2 * t)) + (a6 * f3 + b3 * np.floor(f3 * t)))
                                + c)
        p += 4
    while p < p1:
        _q4_pair(x, packed, scales, y, p)
        p += 1


@nb.njit(cache=True, nogil=True)
def dequant_q8(codes, scales, k0, k1):
    ng = scales.shape[1]
    out = np.empty((k1 - k0, ng * GROUP), dtype=np.float32)
    for k in range(k0, k1):
        for g in range(ng):
            s = scales[k, g]
            base = g * GROUP
            for j in range(GROUP):
                out[k - k0, base + j] = s * np.float32(codes[k, base + j])
    return out


@nb.njit(cache=True, nogil=True)
def dequant_q4(packed, scales, k0, k1):
    ng = scales.shape[1]
    out = np.empty((k1 - k0, ng * GROUP), dtype=np.float32)
    for k in range(k0, k1):
        p = k // 2
        shift = 4 * (k % 2)
        for g in range(ng):
            s = scales[k, g]
            base = g * GROUP
            for j in range(GROUP):
                out[k - k0, base + j] = s * np.float32(((np.int32(packed[p, base + j]) >> shift) & 15) - 8)
    return out
