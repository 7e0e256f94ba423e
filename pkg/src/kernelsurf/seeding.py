"""Deterministic RNG derivation for schedule-independent parallel work."""

from __future__ import annotations

import numpy as np


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Return an independent generator for the substream at ``path``.

    Two calls with the same (seed, path) yield identical streams; distinct
    paths yield statistically independent streams.  Work items that derive
    their generator from their own grid coordinates produce results that do
    not depend on execution order.
    """
    return np.random.default_rng(np.random.SeedSequence((int(seed), *map(int, path))))


def as_generator(rng) -> np.random.Generator:
    """Coerce ``rng`` (Generator, seed int, or None) to a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
