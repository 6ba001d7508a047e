"""Weight-only symmetric group quantization (q8 and q4).

Each row of a ``[m, n]`` weight is cut into contiguous groups of 32 columns
(the last group zero-padded). A group stores one float32 scale and integer
codes in ``[-L, L]`` with ``L = 127`` (q8) or ``L = 7`` (q4). q4 codes are
offset by 8 and packed two per byte along the input dimension: byte
``(p, j)`` holds row ``2p`` in the low nibble and row ``2p + 1`` in the high
nibble. An odd last row is paired with code 0.

Scales are ``max|w| / L`` rounded up to 16 significant bits. With at most 8
code bits, ``code * scale`` is then exact in float32, so every dequantized
element is within ``scale / 2`` of the original without rounding slack.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionError, QuantizationError
from .tensor import Tensor, configured_threads

GROUP_SIZE = _kernels.GROUP
LEVELS = {"q8": 127, "q4": 7}
MODES = ("f32", "q8", "q4")

_SCALE_BITS = 16
_DEQUANT_ROWS = 512


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    mode: str
    scales: np.ndarray  # float32 [m, n_groups]
    codes: np.ndarray  # int8 [m, n_pad] (q8) or uint8 [ceil(m / 2), n_pad] (q4)
    logical_shape: tuple[int, int]
    group_size: int = GROUP_SIZE

    @property
    def shape(self) -> tuple[int, int]:
        return self.logical_shape

    @property
    def padded_cols(self) -> int:
        return self.scales.shape[1] * self.group_size

    @property
    def nbytes(self) -> int:
        return int(self.codes.nbytes + self.scales.nbytes)

    def rows(self, idx) -> Tensor:
        """Dequantize selected rows (embedding lookup)."""
        idx = np.asarray(idx, dtype=np.int64)
        if self.mode == "q8":
            sub = QuantizedTensor(self.mode, self.scales[idx], self.codes[idx],
                                  (len(idx), self.logical_shape[1]))
            return dequantize(sub)
        nib = (self.codes[idx // 2] >> (4 * (idx % 2))[:, None].astype(np.uint8)) & 15
        if (nib == 0).any():
            raise QuantizationError("q4 payload holds a code outside [-7, 7]")
        vals = (nib.astype(np.float32) - 8) * np.repeat(self.scales[idx], self.group_size, axis=1)
        return np.ascontiguousarray(vals[:, :self.logical_shape[1]])


def storage_bytes(shape, mode: str) -> int:
    """Bytes a ``[m, n]`` tensor occupies in ``mode``; 1-D tensors stay f32."""
    if mode == "f32" or len(shape) != 2:
        return 4 * int(np.prod(shape))
    m, n = shape
    groups = -(-n // GROUP_SIZE)
    code_rows = m if mode == "q8" else -(-m // 2)
    return code_rows * groups * GROUP_SIZE + 4 * m * groups


def _round_scale_up(s: np.ndarray) -> np.ndarray:
    mant, exp = np.frexp(s)
    mant = np.ceil(mant * (1 << _SCALE_BITS)) / (1 << _SCALE_BITS)
    up = np.ldexp(mant, exp)
    # subnormal scales can still round down when narrowed to float32
    s32 = up.astype(np.float32)
    s32 = np.where(s32 < up, np.nextafter(s32, np.float32(np.inf)), s32)
    return s32.astype(np.float64)


def quantize(w: Tensor, mode: str) -> QuantizedTensor:
    if mode not in LEVELS:
        raise QuantizationError(f"unknown quantization mode {mode!r}")
    w = np.asarray(w, dtype=np.float32)
    if w.ndim != 2:
        raise DimensionError(f"quantize expects a 2-D weight, got shape {w.shape}")
    bad = ~np.isfinite(w)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise QuantizationError(f"non-finite weight {w[i, j]} at index ({i}, {j})")
    m, n = w.shape
    groups = -(-n // GROUP_SIZE)
    padded = np.zeros((m, groups * GROUP_SIZE), dtype=np.float64)
    padded[:, :n] = w
    grouped = padded.reshape(m, groups, GROUP_SIZE)

    level = LEVELS[mode]
    amax = np.abs(grouped).max(axis=2)
    scales = _round_scale_up(amax / level)
    safe = np.where(scales > 0, scales, 1.0)[:, :, None]
    codes = np.rint(grouped / safe)
    # repair any division misround at exact half-way points
    resid = grouped - codes * safe
    codes += np.where(resid > safe / 2, 1, 0) - np.where(resid < -safe / 2, 1, 0)
    codes = np.clip(codes, -level, level).reshape(m, groups * GROUP_SIZE)

    if mode == "q8":
        packed = codes.astype(np.int8)
    else:
        nib = np.full((m + m % 2, groups * GROUP_SIZE), 8, dtype=np.uint8)
        nib[:m] = codes + 8
        packed = nib[0::2] | (nib[1::2] << 4)
    return QuantizedTensor(mode, scales.astype(np.float32), np.ascontiguousarray(packed), (m, n))


def _check_codes(q: QuantizedTensor) -> None:
    if q.mode == "q8":
        if q.codes.dtype != np.int8 or (q.codes == -128).any():
            raise QuantizationError("q8 payload holds a code outside [-127, 127]")
    elif q.mode == "q4":
        if q.codes.dtype != np.uint8 or ((q.codes & 15) == 0).any() or ((q.codes >> 4) == 0).any():
            raise QuantizationError("q4 payload holds a code outside [-7, 7]")
    else:
        raise QuantizationError(f"unknown quantization mode {q.mode!r}")
    m, n = q.logical_shape
    code_rows = m if q.mode == "q8" else -(-m // 2)
    if q.codes.shape != (code_rows, q.padded_cols) or q.scales.shape[0] != m or q.padded_cols < n:
        raise QuantizationError(f"payload shape {q.codes.shape} inconsistent with {q.logical_shape}")


def _dequant_block(q: QuantizedTensor, k0: int, k1: int) -> np.ndarray:
    kernel = _kernels.dequant_q8 if q.mode == "q8" else _kernels.dequant_q4
    return kernel(q.codes, q.scales, k0, k1)


def dequantize(q: QuantizedTensor) -> Tensor:
    _check_codes(q)
    m, n = q.logical_shape
    return np.ascontiguousarray(_dequant_block(q, 0, m)[:, :n])


def quantized_matmul(x: Tensor, q: QuantizedTensor) -> Tensor:
    """``x @ dequantize(q)`` without materializing the whole float weight.

    Single rows go through the streaming GEMV kernels; wider inputs
    dequantize ``_DEQUANT_ROWS`` weight rows at a time and use BLAS.
    """
    x = np.asarray(x, dtype=np.float32)
    k, n = q.logical_shape
    if x.ndim != 2 or x.shape[1] != k:
        raise DimensionError(f"quantized_matmul shape mismatch: {x.shape} x {q.logical_shape}")
    m = x.shape[0]
    if m <= 2:
        if q.mode == "q8":
            kernel, codes, span = _kernels.gemv_q8, q.codes.view(np.uint8), k
        else:
            kernel, codes, span = _kernels.gemv_q4, q.codes, q.codes.shape[0]
        out = np.zeros((m, q.padded_cols), dtype=np.float32)
        threads = min(configured_threads(), max(1, span // 64))
        for r in range(m):
            xr = np.ascontiguousarray(x[r])
            if threads == 1:
                kernel(xr, codes, q.scales, out[r], 0, span)
                continue
            bounds = np.linspace(0, span, threads + 1).astype(int)
            parts = np.zeros((threads, q.padded_cols), dtype=np.float32)
            with ThreadPoolExecutor(threads) as pool:
                list(pool.map(lambda t: kernel(xr, codes, q.scales, parts[t], bounds[t], bounds[t + 1]),
                              range(threads)))
            out[r] = parts.sum(axis=0)
        return out[:, :n]
    out = np.zeros((m, q.padded_cols), dtype=np.float32)
    for k0 in range(0, k, _DEQUANT_ROWS):
        k1 = min(k, k0 + _DEQUANT_ROWS)
        out += x[:, k0:k1] @ _dequant_block(q, k0, k1)
    return out[:, :n]
