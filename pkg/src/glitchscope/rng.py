"""Portable deterministic random number generation.

Everything in this package that needs randomness (transform parameter
sampling, toy-scorer projection matrices, elastic displacement fields) draws
from the generator defined here, so outputs are bit-reproducible across runs
and across platforms. The generator is fully specified:

* Stream derivation: a stream for ``(seed, label)`` is seeded with
  ``seed XOR fnv1a64(label)`` where ``fnv1a64`` is the 64-bit FNV-1a hash of
  the label's UTF-8 bytes.
* State expansion: the 64-bit stream seed is expanded into the four 64-bit
  words of xoshiro256** state using successive splitmix64 outputs (the
  seeding procedure recommended by the xoshiro authors).
* Core generator: xoshiro256** 1.0.
* Doubles: ``(next_u64() >> 11) * 2**-53`` giving uniforms in [0, 1).
* Normals: Box-Muller on one uniform in (0, 1] and one in [0, 1); pairs are
  consumed in order, the second value of a pair is buffered.

Python integer arithmetic is exact and IEEE-754 double operations are
deterministic, so two runs with the same seed and labels agree bit-for-bit.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, label: str) -> int:
    """Combine a base seed with a textual label into a child stream seed."""
    return (seed & _MASK64) ^ fnv1a64(label.encode("utf-8"))


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class PortableRng:
    """xoshiro256** seeded via splitmix64.

    Construct directly from a 64-bit seed, or use :func:`stream_for` to get
    the documented per-(seed, label) stream.
    """

    __slots__ = ("_s", "_spare_normal")

    def __init__(self, seed: int):
        s = seed & _MASK64
        state = []
        for _ in range(4):
            s, out = splitmix64(s)
            state.append(out)
        self._s = state
        self._spare_normal: float | None = None

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

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def uniforms(self, n: int, lo: float = 0.0, hi: float = 1.0) -> list[float]:
        return [self.uniform(lo, hi) for _ in range(n)]

    def normal(self) -> float:
        """Standard normal via Box-Muller."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        # u1 in (0, 1] so log() is finite; u2 in [0, 1).
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(theta)
        return r * math.cos(theta)

    def normals(self, n: int) -> list[float]:
        return [self.normal() for _ in range(n)]


def stream_for(seed: int, label: str) -> PortableRng:
    """The documented stream for a (seed, label) pair."""
    return PortableRng(derive_seed(seed, label))
