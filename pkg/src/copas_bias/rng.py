"""Reproducible per-replicate random streams derived from one master seed."""
from __future__ import annotations

import numpy as np


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def spawn(seed, n: int) -> list[np.random.SeedSequence]:
    """``n`` independent child sequences; child ``i`` depends only on (seed, i).

    Unlike ``SeedSequence.spawn`` this is stateless, so calling it twice on the
    same parent yields the same children.
    """
    parent = as_seed_sequence(seed)
    return [np.random.SeedSequence(parent.entropy, spawn_key=parent.spawn_key + (i,))
            for i in range(n)]


def replicate_generators(seed, n: int):
    for child in spawn(seed, n):
        yield np.random.default_rng(child)
