"""Seeded, splittable random streams.

All stochastic functions in the package take a ``numpy.random.Generator``.
Streams come from the counter-based Philox bit generator so that independent
substreams can be derived from ``(seed, key...)`` without coordination.
"""
from __future__ import annotations

import numpy as np


def make_rng(seed=0, *key) -> np.random.Generator:
    """Philox generator for ``seed`` and an optional spawn key path."""
    if isinstance(seed, np.random.Generator):
        return seed
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def spawn(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    return [np.random.Generator(bg) for bg in rng.bit_generator.spawn(count)]
