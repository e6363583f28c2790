"""Deterministic random streams.

Every stochastic component gets its own stream derived from the run seed and a
string tag, so adding draws to one component never shifts the draws of another.
Identical seed + identical call sequence gives identical values on any machine.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _tag_seed(seed: int, tag: str) -> int:
    digest = hashlib.blake2b(f"{seed}/{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Counter-based random stream with deterministic child derivation."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, tag: str) -> "RngStream":
        """Independent stream keyed by (seed, tag); order of creation is irrelevant."""
        return RngStream(_tag_seed(self.seed, tag))

    def uniform(self, low, high, size=None, dtype=np.float64):
        return self._gen.uniform(low, high, size=size).astype(dtype, copy=False)

    def normal(self, loc=0.0, scale=1.0, size=None, dtype=np.float64):
        return self._gen.normal(loc, scale, size=size).astype(dtype, copy=False)

    def random(self, size=None):
        return self._gen.random(size=size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True, p=None) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace, p=p)
