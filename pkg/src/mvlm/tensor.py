"""Dense float32 tensors and the primitive kernels built on them.

A tensor here is a C-contiguous ``numpy.ndarray`` of dtype float32 with rank
1 to 4. Operations are pure; they never mutate their inputs.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np
from threadpoolctl import threadpool_limits
from scipy.special import erf

from .errors import DimensionError, NanInputError

Tensor = np.ndarray

MAX_RANK = 4


def as_tensor(x, copy: bool = False) -> Tensor:
    """Coerce ``x`` to a contiguous float32 tensor and check the shape rules."""
    t = np.array(x, dtype=np.float32, copy=copy or None, order="C")
    if t.ndim == 0:
        t = t.reshape(1)
    if t.ndim > MAX_RANK:
        raise DimensionError(f"rank {t.ndim} exceeds maximum rank {MAX_RANK}")
    if 0 in t.shape:
        raise DimensionError(f"shape {t.shape} has an empty axis")
    return t


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``[m,k] @ [k,n]`` with float32 accumulation."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = np.asarray(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} invalid for rank {x.ndim}")
    if np.isnan(x).any():
        raise NanInputError("softmax input contains NaN")
    z = x.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    # -inf rows (fully masked) are left to the caller; finite inputs never hit this
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z.astype(np.float32)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the error function."""
    z = np.asarray(x, dtype=np.float64)
    return (0.5 * z * (1.0 + erf(z / np.sqrt(2.0)))).astype(np.float32)


def silu(x: Tensor) -> Tensor:
    z = np.asarray(x, dtype=np.float64)
    # x * sigmoid(x) written to avoid exp overflow for large |x|
    out = np.where(z >= 0, z / (1.0 + np.exp(-np.abs(z))), z * np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return out.astype(np.float32)


_thread_override = None


def configured_threads() -> int:
    """Worker count: an active :func:`thread_limit`, else ``MVLM_THREADS`` (default 1)."""
    if _thread_override is not None:
        return _thread_override
    raw = os.environ.get("MVLM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


@contextmanager
def thread_limit(n: int):
    """Cap BLAS and quantized-kernel parallelism to ``n`` workers inside the block."""
    global _thread_override
    previous = _thread_override
    _thread_override = max(1, int(n))
    try:
        with threadpool_limits(limits=_thread_override):
            yield
    finally:
        _thread_override = previous
