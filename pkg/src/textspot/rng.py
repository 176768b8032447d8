"""Deterministic pseudorandom streams (xoshiro256**, splitmix64-seeded).

Every source of randomness in the package flows through this generator so
that a run is fully determined by its integer seed.  The algorithm is spelled
out (rather than delegating to a platform RNG) so streams are reproducible
bit-for-bit anywhere.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256:
    """xoshiro256** stream; state derived from the seed via splitmix64."""

    def __init__(self, seed: int):
        s = seed & _MASK64
        state = []
        for _ in range(4):
            s, v = _splitmix64(s)
            state.append(v)
        self._s = state
        self._gauss_cache: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def next_float(self) -> float:
        # 53 high bits -> double in [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def randint(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        return min(int(self.next_float() * n), n - 1)

    def gauss(self) -> float:
        if self._gauss_cache is not None:
            z = self._gauss_cache
            self._gauss_cache = None
            return z
        u1 = self.next_float()
        while u1 <= 0.0:
            u1 = self.next_float()
        u2 = self.next_float()
        r = math.sqrt(-2.0 * math.log(u1))
        self._gauss_cache = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def uniform_array(self, shape, lo: float, hi: float) -> np.ndarray:
        n = int(np.prod(shape))
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.next_float()
        return (lo + (hi - lo) * out).reshape(shape)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]


def substream(seed: int, *indices: int) -> Xoshiro256:
    """Independent child stream for (seed, indices).

    Each index folds into the seed as splitmix64(seed XOR (index+1)*GOLDEN),
    so distinct index tuples give unrelated streams and sequential vs.
    parallel generation agree.
    """
    s = seed & _MASK64
    for ix in indices:
        s ^= ((ix + 1) * _GOLDEN) & _MASK64
        _, s = _splitmix64(s)
    return Xoshiro256(s)
