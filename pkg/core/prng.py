# core/prng.py
"""
Counter-based random streams.

Draws come from numpy's Philox4x64-10 bit generator. The 128-bit key packs
(seed, stream) and the 256-bit counter starts at ``counter``, so a stream is a
pure function of those three integers and replays identically on any platform.
"""
from dataclasses import dataclass, replace

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix64(value: int) -> int:
    # splitmix64 finalizer
    value = (value + 0x9E3779B97F4A7C15) & _MASK64
    value = ((value ^ (value >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    value = ((value ^ (value >> 27)) * 0x94D049BB133111EB) & _MASK64
    return value ^ (value >> 31)


@dataclass(frozen=True)
class Prng:
    seed: int
    counter: int = 0
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = (self.seed & _MASK64) | ((self.stream & _MASK64) << 64)
        return np.random.Generator(np.random.Philox(key=key, counter=self.counter))

    def split(self, index: int) -> "Prng":
        """Child stream ``index``; children of different parents never share a key."""
        return Prng(self.seed, 0, _mix64(self.stream ^ _mix64(index + 1)))

    def advance(self, blocks: int) -> "Prng":
        return replace(self, counter=self.counter + blocks)


def generator(seed: int, *path: int) -> np.random.Generator:
    """Shorthand for ``Prng(seed).split(a).split(b)...generator()``."""
    prng = Prng(seed)
    for index in path:
        prng = prng.split(index)
    return prng.generator()
