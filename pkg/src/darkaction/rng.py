"""Seeded splitmix64 random source.

Every random draw in the package goes through :class:`Rng` so that a run is
reproducible from a single integer seed, independently of numpy's generators.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_INV53 = 2.0 ** -53


class Rng:
    """splitmix64 generator; ``state`` is the full 64-bit state."""

    def __init__(self, seed: int = 0):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MUL1) & MASK64
        z = ((z ^ (z >> 27)) * _MUL2) & MASK64
        return z ^ (z >> 31)

    def next_uniform(self) -> float:
        """Uniform real in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * _INV53

    def randbelow(self, n: int) -> int:
        """Integer uniform over ``{0, ..., n-1}`` as ``floor(u * n)``."""
        if n < 1:
            raise ValueError(f"randbelow needs n >= 1, got {n}")
        return min(int(self.next_uniform() * n), n - 1)

    def u64_array(self, n: int) -> np.ndarray:
        """The next ``n`` raw outputs, identical to ``n`` calls of :meth:`next_u64`."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN) & MASK64
        return z

    def uniform_array(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = math.prod(shape) if isinstance(shape, tuple) else int(shape)
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV53
        return (low + u * (high - low)).reshape(shape)

    def normal_array(self, shape) -> np.ndarray:
        """Standard normal draws via Box-Muller on pairs of uniforms."""
        n = math.prod(shape) if isinstance(shape, tuple) else int(shape)
        half = (n + 1) // 2
        u = self.uniform_array(2 * half)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(shape)

    def normal(self) -> float:
        return float(self.normal_array(1)[0])

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``."""
        out = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            out[i], out[j] = out[j], out[i]
        return out


def derive_seed(base_seed: int, index: int) -> int:
    """Seed for the ``index``-th independent worker stream."""
    return (base_seed ^ index) & MASK64
