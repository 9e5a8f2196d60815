"""Seedable counter-based random streams with reproducible splitting.

Built on numpy's Philox counter generator. A stream is identified by a
64-bit seed; split(child) derives an independent substream whose output
depends only on (seed, child), never on how much the parent has drawn.
Child ids may be ints or short string tags.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _fnv1a(tag: str) -> int:
    h = 0xCBF29CE484222325
    for byte in tag.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


class Rng:
    """Deterministic random stream; equal seeds give byte-equal draws."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def split(self, child) -> "Rng":
        """Independent substream for a child id (int or string tag)."""
        child_key = _fnv1a(child) if isinstance(child, str) else int(child) & _MASK64
        return Rng(_splitmix64(self.seed ^ _splitmix64(child_key)))

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def shuffle(self, items: list) -> None:
        self._gen.shuffle(items)
