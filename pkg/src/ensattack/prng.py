"""Deterministic random streams built on SplitMix64.

Every stochastic choice in the package (weight init, dataset noise, batch
shuffling, random target labels, random coordinate schedules) draws from its
own stream keyed by ``(seed, tag)``, so each choice can be reproduced in
isolation and reseeded independently of all others.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):  # wraparound mod 2**64 is the point
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _fnv1a(tag: str) -> int:
    h = 0xCBF29CE484222325
    for byte in tag.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


class Stream:
    """A SplitMix64 stream for one (seed, purpose-tag) pair."""

    def __init__(self, seed: int, tag: str):
        self.seed = int(seed)
        self.tag = tag
        state = (self.seed & 0xFFFFFFFFFFFFFFFF) ^ _fnv1a(tag)
        # one warm-up mix so nearby seeds do not produce nearby streams
        self._state = int(_mix(np.uint64(state)))

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        with np.errstate(over="ignore"):
            idx = np.arange(1, n + 1, dtype=np.uint64)
            base = np.uint64(self._state) + idx * _GOLDEN
            self._state = int((np.uint64(self._state) + np.uint64(n) * _GOLDEN) & _U64)
        return _mix(base)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """float32 uniforms in [low, high) with 24 bits of resolution."""
        n = int(np.prod(shape)) if shape else 1
        bits = self.u64(n) >> np.uint64(40)  # top 24 bits
        u = bits.astype(np.float32) * np.float32(2.0**-24)
        out = u * np.float32(high - low) + np.float32(low)
        return out.reshape(shape)

    def integer(self, bound: int) -> int:
        """One integer in [0, bound). Modulo bias is negligible for the
        small bounds used here (class counts, coordinate indices)."""
        return int(self.u64(1)[0] % np.uint64(bound))

    def permutation(self, n: int) -> np.ndarray:
        """A seeded permutation of range(n)."""
        keys = self.u64(n)
        return np.argsort(keys, kind="stable")


def stream(seed: int, tag: str) -> Stream:
    return Stream(seed, tag)
