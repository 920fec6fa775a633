"""Derived random streams.

Every stochastic step draws from a counter-based Philox generator keyed by
``(master seed, *key)``, so a task's stream depends only on its coordinates
(replicate, imputation, fold, ...) and not on execution order.
"""
from __future__ import annotations

import numpy as np

SeedLike = "int | np.random.SeedSequence"

# stream tags; appended to keys so different purposes never share a stream
FOLDS = 1
IMPUTE = 2
NAIVE_IMPUTE = 3
DATA = 4
AMPUTE = 5
REPLICATE = 6


def derive(seed, *key: int) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    return np.random.SeedSequence(int(seed), spawn_key=tuple(key))


def generator(seed, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive(seed, *key)))


def describe(seed) -> list[int]:
    """JSON-friendly identifier of a stream: entropy followed by spawn key."""
    ss = derive(seed)
    return [int(ss.entropy)] + [int(k) for k in ss.spawn_key]
