"""Seeded generator helpers.

All randomness flows through numpy PCG64 generators built from explicit
entropy tuples, so every operation is a pure function of its seeds.
"""
from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int]]

# Purpose tags keep derived streams for different components apart.
TAG_SELECT = 1
TAG_TRAIN = 2
TAG_NOISE = 3
TAG_POISON = 4
TAG_SHUFFLE = 5
TAG_REDRAW = 6
TAG_MALICIOUS = 7


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Build a generator from an int or a tuple of non-negative ints."""
    if isinstance(seed, (int, np.integer)):
        return np.random.default_rng(int(seed))
    return np.random.default_rng([int(s) for s in seed])


def derive(seed: SeedLike, *keys: int) -> tuple[int, ...]:
    """Derived seed = f(seed, keys); stable across runs and platforms."""
    base = (int(seed),) if isinstance(seed, (int, np.integer)) else tuple(int(s) for s in seed)
    return base + tuple(int(k) for k in keys)
