"""Portable PRNG: SplitMix64-seeded xoshiro256** with Box-Muller normals.

Every random draw in the lab goes through :class:`Rng` so that a seed means
the same stream in any implementation. Sub-seeds are derived from a master
seed and a text label with :func:`seed_for`.

Conventions, fixed so other implementations can agree:

* uniform doubles are ``(x >> 11) * 2**-53`` in [0, 1)
* Box-Muller consumes two uniforms ``u1, u2`` and emits
  ``r*cos(2*pi*u2)`` then ``r*sin(2*pi*u2)`` with ``r = sqrt(-2 ln(1-u1))``
* ``randbelow(n)`` uses rejection on the top bits (no modulo bias)
* permutations are Fisher-Yates, swapping from the end
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def mix64(z: int) -> int:
    """SplitMix64 output finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(label: str) -> int:
    h = _FNV_OFFSET
    for b in label.encode("utf-8"):
        h ^= b
        h = (h * _FNV_PRIME) & MASK64
    return h


def seed_for(master_seed: int, label: str) -> int:
    """``mix64(master_seed XOR fnv1a64(label))``."""
    return mix64((int(master_seed) & MASK64) ^ fnv1a64(label))


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        return mix64(self.state)


class Rng:
    """xoshiro256** stream."""

    def __init__(self, seed: int):
        sm = SplitMix64(seed)
        self.s = [sm.next() for _ in range(4)]
        self.seed = int(seed) & MASK64

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        i = 0
        while i < n:
            u1 = self.uniform()
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(1.0 - u1))
            theta = 2.0 * math.pi * u2
            out[i] = r * math.cos(theta)
            if i + 1 < n:
                out[i + 1] = r * math.sin(theta)
            i += 2
        return out

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        shape = tuple(shape) if not isinstance(shape, int) else (shape,)
        n = int(np.prod(shape)) if shape else 1
        return (self.normals(n) * std).reshape(shape)

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        bits = max(1, (n - 1).bit_length())
        while True:
            r = self.next_u64() >> (64 - bits)
            if r < n:
                return r

    def permutation(self, n: int) -> np.ndarray:
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return np.array(idx, dtype=np.int64)

    def bernoulli_mask(self, shape, keep: float) -> np.ndarray:
        shape = tuple(shape)
        n = int(np.prod(shape))
        return (self.uniforms(n) < keep).astype(np.float64).reshape(shape)

    def numpy_generator(self) -> np.random.Generator:
        """Bulk-noise generator (PCG64) seeded from the next draw of this stream."""
        return np.random.Generator(np.random.PCG64(self.next_u64()))
