"""Deterministic random number generation.

Everything stochastic in this package draws from a single, fully specified
generator so that runs are reproducible bit-for-bit and portable to other
languages:

* stream seeding: the 64-bit seed is expanded with the splitmix64 finalizer
  (constants 0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9, 0x94D049BB133111EB,
  shifts 30/27/31) into the four xoshiro256** state words,
* core generator: xoshiro256** (Blackman & Vigna),
* uniforms: the top 53 bits of each output word, i.e. ``(x >> 11) * 2**-53``,
* normals: Box-Muller on uniform pairs, the second variate cached,
* substreams: :func:`derive_seed` folds integer path components into a seed
  with the same splitmix64 finalizer, so e.g. grid cell k of master seed s
  always evaluates with ``derive_seed(s, k)`` no matter which worker runs it.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_INV_2_53 = 2.0**-53
_TWO_PI = 2.0 * math.pi


def _mix(z: int) -> int:
    """splitmix64 output function (finalizer only, no counter)."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _splitmix_next(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    return state, _mix(state)


def derive_seed(seed: int, *path: int) -> int:
    """Derive a substream seed from a master seed and an integer path.

    Each path component is mixed in separately, so (s, 1, 0) and (s, 0, 1)
    land in unrelated streams.
    """
    s = _mix(seed & _MASK64)
    for p in path:
        s = _mix((s ^ _mix(p & _MASK64)) * 0x9E3779B97F4A7C15 & _MASK64)
    return s


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** stream seeded via splitmix64."""

    __slots__ = ("_s0", "_s1", "_s2", "_s3", "_spare")

    def __init__(self, seed: int):
        state = seed & _MASK64
        state, self._s0 = _splitmix_next(state)
        state, self._s1 = _splitmix_next(state)
        state, self._s2 = _splitmix_next(state)
        state, self._s3 = _splitmix_next(state)
        self._spare: float | None = None

    def next_uint64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_uint64() >> 11) * _INV_2_53

    def uniform_range(self, low: float, high: float) -> float:
        return low + (high - low) * self.uniform()

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n). Floor-of-uniform construction."""
        k = int(self.uniform() * n)
        return n - 1 if k >= n else k

    def normal(self) -> float:
        """Standard normal via Box-Muller; u1 mapped into (0, 1]."""
        if self._spare is not None:
            z = self._spare
            self._spare = None
            return z
        u1 = ((self.next_uint64() >> 11) + 1) * _INV_2_53
        u2 = (self.next_uint64() >> 11) * _INV_2_53
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(_TWO_PI * u2)
        return r * math.cos(_TWO_PI * u2)

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.normal()
        return out

    def shuffle(self, indices: np.ndarray) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(indices) - 1, 0, -1):
            j = self.integer(i + 1)
            indices[i], indices[j] = indices[j], indices[i]
