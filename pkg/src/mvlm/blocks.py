"""Neural building blocks: norms, rotary embeddings, attention, SwiGLU, grid convolutions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np

from .errors import ContextOverflowError, DimensionError, PositionRangeError
from .quantize import QuantizedTensor, quantized_matmul
from .tensor import Tensor, matmul, silu, softmax

NORM_EPS = 1e-5
ROPE_BASE = 10000.0

Weight = Union[np.ndarray, QuantizedTensor]


def linear(x: Tensor, w: Weight) -> Tensor:
    if isinstance(w, QuantizedTensor):
        return quantized_matmul(x, w)
    return matmul(x, w)


def weight_shape(w: Weight) -> tuple:
    return tuple(w.logical_shape) if isinstance(w, QuantizedTensor) else w.shape


@dataclass(eq=False)
class RmsNormParams:
    gain: np.ndarray
    eps: float = NORM_EPS


@dataclass(eq=False)
class LayerNormParams:
    gain: np.ndarray
    bias: np.ndarray
    eps: float = NORM_EPS

    def __post_init__(self):
        if self.gain.shape != self.bias.shape:
            raise DimensionError(f"layer norm gain {self.gain.shape} vs bias {self.bias.shape}")


def rms_norm(x: Tensor, p: RmsNormParams) -> Tensor:
    x = np.asarray(x, dtype=np.float32)
    if x.shape[-1] != p.gain.shape[0]:
        raise DimensionError(f"rms_norm width {x.shape[-1]} != gain length {p.gain.shape[0]}")
    z = x.astype(np.float64)
    inv = 1.0 / np.sqrt((z * z).mean(axis=-1, keepdims=True) + p.eps)
    return (z * inv * p.gain).astype(np.float32)


def layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    x = np.asarray(x, dtype=np.float32)
    if x.shape[-1] != p.gain.shape[0]:
        raise DimensionError(f"layer_norm width {x.shape[-1]} != gain length {p.gain.shape[0]}")
    z = x.astype(np.float64)
    mu = z.mean(axis=-1, keepdims=True)
    var = ((z - mu) ** 2).mean(axis=-1, keepdims=True)
    return ((z - mu) / np.sqrt(var + p.eps) * p.gain + p.bias).astype(np.float32)


@dataclass(frozen=True, eq=False)
class RopeTable:
    """Precomputed rotation angles; pair ``i`` at position ``p`` turns by ``p * base**(-2i/head_dim)``."""

    base: float
    head_dim: int
    max_positions: int
    cos: np.ndarray  # float64 [max_positions, head_dim // 2]
    sin: np.ndarray


@lru_cache(maxsize=16)
def rope_table(head_dim: int, max_positions: int, base: float = ROPE_BASE) -> RopeTable:
    if head_dim % 2:
        raise DimensionError(f"rotary head_dim must be even, got {head_dim}")
    inv_freq = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    angles = np.outer(np.arange(max_positions, dtype=np.float64), inv_freq)
    return RopeTable(base, head_dim, max_positions, np.cos(angles), np.sin(angles))


def apply_rope(x: Tensor, positions, table: RopeTable) -> Tensor:
    """Rotate adjacent pairs of ``x [n, heads, head_dim]`` by their positions."""
    x = np.asarray(x, dtype=np.float32)
    positions = np.asarray(positions, dtype=np.int64)
    if x.ndim != 3 or x.shape[2] != table.head_dim or positions.shape != (x.shape[0],):
        raise DimensionError(f"apply_rope got x {x.shape}, positions {positions.shape}, head_dim {table.head_dim}")
    if positions.size and (positions.min() < 0 or positions.max() >= table.max_positions):
        raise PositionRangeError(
            f"positions [{positions.min()}, {positions.max()}] outside table of {table.max_positions}")
    cos = table.cos[positions][:, None, :]
    sin = table.sin[positions][:, None, :]
    even = x[..., 0::2].astype(np.float64)
    odd = x[..., 1::2].astype(np.float64)
    out = np.empty(x.shape, dtype=np.float32)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


@dataclass(eq=False)
class AttentionParams:
    wq: Weight
    wk: Weight
    wv: Weight
    wo: Weight
    num_heads: int

    def __post_init__(self):
        d = weight_shape(self.wq)[0]
        if d % self.num_heads:
            raise DimensionError(f"width {d} not divisible by {self.num_heads} heads")


class LayerKv:
    """Key/value buffers of one attention layer, ``[capacity, heads, head_dim]``."""

    def __init__(self, capacity: int, num_heads: int, head_dim: int):
        self.capacity = capacity
        self.num_heads = num_heads
        self.head_dim = head_dim
        self.keys = np.zeros((capacity, num_heads, head_dim), dtype=np.float32)
        self.values = np.zeros((capacity, num_heads, head_dim), dtype=np.float32)
        self.filled = 0

    def append(self, k: np.ndarray, v: np.ndarray) -> None:
        n = k.shape[0]
        if self.filled + n > self.capacity:
            raise ContextOverflowError(f"cache holds {self.filled} of {self.capacity}; cannot add {n}")
        self.keys[self.filled:self.filled + n] = k
        self.values[self.filled:self.filled + n] = v
        self.filled += n


def attend(q: np.ndarray, k: np.ndarray, v: np.ndarray, causal_offset: Optional[int]) -> np.ndarray:
    """Scaled dot-product attention over heads.

    ``q [n, h, d]`` against ``k, v [t, h, d]``. With ``causal_offset`` set,
    query ``i`` sees keys ``0 .. causal_offset + i``; ``None`` means full visibility.
    """
    n, heads, hd = q.shape
    t = k.shape[0]
    scores = np.einsum("nhd,thd->hnt", q, k, optimize=False) * np.float32(1.0 / np.sqrt(hd))
    if causal_offset is not None:
        visible = np.arange(t)[None, :] <= (causal_offset + np.arange(n))[:, None]
        scores = np.where(visible[None], scores, -np.inf)
    weights = softmax(scores, axis=-1)
    return np.einsum("hnt,thd->nhd", weights, v, optimize=False).astype(np.float32)


def causal_attention(x: Tensor, p: AttentionParams, rope: RopeTable,
                     cache: Optional[LayerKv] = None) -> Tensor:
    """Multi-head causal self-attention with rotary positions.

    Without a cache, ``x`` holds positions ``0..n-1``. With one, ``x`` holds
    the next ``n`` positions after ``cache.filled`` and its keys/values are
    appended.
    """
    x = np.asarray(x, dtype=np.float32)
    n, d = x.shape
    heads = p.num_heads
    hd = d // heads
    if weight_shape(p.wq)[0] != d:
        raise DimensionError(f"attention width {weight_shape(p.wq)[0]} != input width {d}")
    if hd != rope.head_dim:
        raise DimensionError(f"head_dim {hd} != rotary table head_dim {rope.head_dim}")
    start = 0
    if cache is not None:
        if (cache.num_heads, cache.head_dim) != (heads, hd):
            raise DimensionError(
                f"cache heads/head_dim {(cache.num_heads, cache.head_dim)} != attention {(heads, hd)}")
        start = cache.filled
        if start + n > cache.capacity:
            raise ContextOverflowError(f"{start} cached + {n} new exceeds capacity {cache.capacity}")
    if start + n > rope.max_positions:
        raise ContextOverflowError(f"{start + n} positions exceed context length {rope.max_positions}")

    positions = np.arange(start, start + n)
    q = apply_rope(linear(x, p.wq).reshape(n, heads, hd), positions, rope)
    k = apply_rope(linear(x, p.wk).reshape(n, heads, hd), positions, rope)
    v = linear(x, p.wv).reshape(n, heads, hd)
    if cache is not None:
        cache.append(k, v)
        k = cache.keys[:cache.filled]
        v = cache.values[:cache.filled]
    out = attend(q, k, v, causal_offset=start)
    return linear(out.reshape(n, d), p.wo)


@dataclass(eq=False)
class SwigluParams:
    w_gate: Weight
    w_up: Weight
    w_down: Weight


def swiglu_ffn(x: Tensor, p: SwigluParams) -> Tensor:
    x = np.asarray(x, dtype=np.float32)
    if x.shape[-1] != weight_shape(p.w_gate)[0]:
        raise DimensionError(f"swiglu input width {x.shape[-1]} != {weight_shape(p.w_gate)[0]}")
    hidden = silu(linear(x, p.w_gate)) * linear(x, p.w_up)
    return linear(hidden, p.w_down)


@dataclass(eq=False)
class ConvParams:
    """Pointwise weight ``[c_in, c_out]`` or depthwise weight ``[c, k, k]``."""

    kind: str
    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kind not in ("pointwise", "depthwise"):
            raise DimensionError(f"unknown conv kind {self.kind!r}")
        if self.stride not in (1, 2):
            raise DimensionError(f"stride must be 1 or 2, got {self.stride}")
        if self.kind == "pointwise" and self.stride != 1:
            raise DimensionError("pointwise convolutions always use stride 1")
        if self.kind == "depthwise":
            _, kh, kw = self.weight.shape
            if kh != kw or kh % 2 == 0:
                raise DimensionError(f"depthwise kernel must be square with odd size, got {kh}x{kw}")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[1] if self.kind == "pointwise" else self.weight.shape[0]


def conv_on_grid(x: Tensor, p: ConvParams, require_square: bool = False) -> Tensor:
    """Convolve a token grid ``[h, w, c]``."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise DimensionError(f"conv_on_grid expects [h, w, c], got {x.shape}")
    h, w, c = x.shape
    if require_square and h != w:
        raise DimensionError(f"grid {h}x{w} is not square")
    if p.kind == "pointwise":
        if p.weight.shape[0] != c:
            raise DimensionError(f"pointwise expects {p.weight.shape[0]} channels, got {c}")
        out = matmul(x.reshape(h * w, c), p.weight).reshape(h, w, -1)
    else:
        if p.weight.shape[0] != c:
            raise DimensionError(f"depthwise expects {p.weight.shape[0]} channels, got {c}")
        k = p.weight.shape[1]
        s, pad = p.stride, p.padding
        padded = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
        oh = (h + 2 * pad - k) // s + 1
        ow = (w + 2 * pad - k) // s + 1
        out = np.zeros((oh, ow, c), dtype=np.float32)
        for dy in range(k):
            for dx in range(k):
                window = padded[dy:dy + s * (oh - 1) + 1:s, dx:dx + s * (ow - 1) + 1:s, :]
                out += window * p.weight[:, dy, dx]
    if p.bias is not None:
        out = out + p.bias
    return out.astype(np.float32)
