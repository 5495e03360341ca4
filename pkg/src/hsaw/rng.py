"""Counter-based splitmix64 generator.

The generator is defined bit-for-bit so that weight initialisation, data
shuffling and rendering noise are reproducible on any platform.
"""

from __future__ import annotations

import zlib

import numpy as np

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *tags) -> int:
    """Derive an independent 64-bit seed from ``seed`` and a tuple of tags."""
    state = int(seed) & _MASK64
    for tag in tags:
        h = zlib.crc32(str(tag).encode("utf-8"))
        z = np.array([(state ^ (h * 0x100000001B3)) & _MASK64], dtype=np.uint64)
        state = int(_mix(z + GOLDEN_GAMMA)[0])
    return state


class SplitMix64:
    """splitmix64 stream: output ``i`` is ``mix(seed + (i + 1) * gamma)``."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix(np.uint64(self.seed) + idx * GOLDEN_GAMMA)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` float64 values in [0, 1) built from the top 53 bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def uniform_range(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.uniform(n)

    def normal(self, n: int) -> np.ndarray:
        """Standard normal samples via Box-Muller (two uniforms per sample)."""
        u = self.uniform(2 * n)
        u1 = 1.0 - u[:n]  # (0, 1], keeps log finite
        u2 = u[n:]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")
