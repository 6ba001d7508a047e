"""
Group-wise weight quantization
==============================

Every 32 consecutive columns of a weight row share one float32 scale. q8
stores int8 codes in [-127, 127]; q4 packs two 4-bit codes per byte. Here
we check the error bound, the storage cost and the matvec speed.
"""

import time

import numpy as np

from mvlm import dequantize, quantize, quantized_matmul

rng = np.random.default_rng(0)
w = rng.standard_normal((2048, 5632)).astype(np.float32)
x = rng.standard_normal((1, 2048)).astype(np.float32)

print(f"f32 weight: {w.nbytes / 2**20:.1f} MiB")
for mode in ("q8", "q4"):
    q = quantize(w, mode)
    err = np.abs(dequantize(q) - w)
    half_scale = np.repeat(q.scales, 32, axis=1)[:, :w.shape[1]] / 2
    print(f"{mode}: {q.nbytes / 2**20:6.1f} MiB  ({8 * q.nbytes / w.size:.2f} bits/weight)"
          f"  max err / (scale/2) = {(err / half_scale).max():.3f}")

#--- single-row matvec, the decode-time workload -----------------------------
def per_call(f, reps=50):
    f()
    t = time.perf_counter()
    for _ in range(reps):
        f()
    return (time.perf_counter() - t) / reps * 1e3

print("\nmatvec timings:")
print(f"  f32 (BLAS)  {per_call(lambda: x @ w):6.2f} ms")
for mode in ("q8", "q4"):
    q = quantize(w, mode)
    ref = x.astype(np.float64) @ dequantize(q).astype(np.float64)
    got = quantized_matmul(x, q)
    rel = np.abs(got - ref).max() / np.abs(ref).max()
    print(f"  {mode}         {per_call(lambda: quantized_matmul(x, q)):6.2f} ms   rel err vs dequantized {rel:.1e}")
