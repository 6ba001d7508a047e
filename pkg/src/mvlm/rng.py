"""SplitMix64 counter-based generator.

Element ``i`` (0-based) of a stream seeded with ``s`` is::

    z = (s + (i + 1) * GAMMA) mod 2**64
    z = (z ^ (z >> 30)) * MIX1 mod 2**64
    z = (z ^ (z >> 27)) * MIX2 mod 2**64
    z = z ^ (z >> 31)

Uniform doubles take the top 53 bits: ``(z >> 11) * 2**-53``. The same
constants are used by weight initialization, top-k sampling and the
reference oracle, so any stream can be regenerated from ``(seed, index)``.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_CHUNK = 1 << 20


def mix64(z: int) -> int:
    """Scalar finalizer (pure Python ints)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Sequential view over a SplitMix64 stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.index = 0

    def next_u64(self) -> int:
        self.index += 1
        return mix64(self.seed + self.index * GAMMA)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def u64_array(self, n: int) -> np.ndarray:
        counters = np.arange(self.index + 1, self.index + n + 1, dtype=np.uint64)
        self.index += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + counters * np.uint64(GAMMA)
            return _mix_array(z)

    def uniform(self, n: int, low: float, high: float) -> np.ndarray:
        """``n`` float64 draws from [low, high), generated in bounded chunks."""
        out = np.empty(n, dtype=np.float64)
        for start in range(0, n, _CHUNK):
            stop = min(n, start + _CHUNK)
            z = self.u64_array(stop - start)
            out[start:stop] = (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        out *= high - low
        out += low
        return out


def stream_for(seed: int, name: str) -> SplitMix64:
    """Independent stream for a named tensor: seeded by mix(seed ^ fnv1a(name))."""
    return SplitMix64(mix64((int(seed) & MASK64) ^ fnv1a64(name)))
