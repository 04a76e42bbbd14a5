"""Seeded random streams.

All randomness goes through :class:`SeededRNG`, a thin wrapper around numpy's
PCG64 bit generator (``numpy.random.Generator(PCG64(SeedSequence(seed)))``).
PCG64 and SeedSequence are specified by numpy and stable across platforms and
releases, so a seed reproduces the same stream anywhere numpy >= 1.17 runs.

Child streams are derived with ``SeedSequence(entropy=seed, spawn_key=key)``
which lets callers give every sample or task its own stream without the
result depending on generation order.
"""
from __future__ import annotations

import numpy as np

# spawn-key domains, keep them distinct
DOMAIN_TRAIN = 1
DOMAIN_EVAL = 2
DOMAIN_INIT = 3
DOMAIN_META = 4
DOMAIN_EPISODE = 5
DOMAIN_VAL = 6


class SeededRNG:
    def __init__(self, seed: int = 0, spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.spawn_key = tuple(int(k) for k in spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *key: int) -> "SeededRNG":
        """Independent stream identified by ``key`` under this stream's seed."""
        return SeededRNG(self.seed, self.spawn_key + tuple(key))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None):
        """Uniform floats in ``[low, high)``."""
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        """Uniform integers in ``[low, high)``."""
        return self._gen.integers(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)


def as_rng(rng: "SeededRNG | int | None") -> SeededRNG:
    if isinstance(rng, SeededRNG):
        return rng
    return SeededRNG(0 if rng is None else rng)
