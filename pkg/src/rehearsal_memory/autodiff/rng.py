"""Deterministic, platform-stable random streams.

Every draw builds a fresh counter-based Philox generator from
``(seed, counter)``, so an ``Rng`` is fully described by those two numbers:
replaying the same (seed, counter) sequence reproduces the same draws on
any platform. Independent substreams are derived by hashing a tag into a
new 64-bit seed, which keeps e.g. per-sample dataset generation order- and
worker-independent.
"""

from __future__ import annotations

import hashlib

import numpy as np

ALGORITHM = "philox-4x64-10"

# Each draw gets its own disjoint counter block of 2^64 states.
_COUNTER_STRIDE = 1 << 64


class Rng:
    __slots__ = ("seed", "counter")

    algorithm = ALGORITHM

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter}, algorithm={ALGORITHM!r})"

    def _next(self) -> np.random.Generator:
        bitgen = np.random.Philox(key=self.seed, counter=self.counter * _COUNTER_STRIDE)
        self.counter += 1
        return np.random.Generator(bitgen)

    def child(self, *tags) -> "Rng":
        """Derive an independent stream keyed by (seed, *tags)."""
        h = hashlib.blake2b(digest_size=8)
        h.update(str(self.seed).encode())
        for tag in tags:
            h.update(b"/")
            h.update(str(tag).encode())
        return Rng(int.from_bytes(h.digest(), "little"))

    # draw helpers ------------------------------------------------------
    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return self._next().uniform(low, high, size=shape)

    def normal(self, shape=(), scale: float = 1.0) -> np.ndarray:
        return self._next().normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._next().integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._next().permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._next().choice(n, size=size, replace=replace)
