"""Deterministic per-replica seed streams."""

from __future__ import annotations

import numpy as np

__all__ = ["replica_seeds", "replica_generators"]


def replica_seeds(seed: int, count: int) -> np.ndarray:
    """One 63-bit seed per replica, spawned from ``seed``.

    Replica ``k`` gets the same seed whatever ``count`` is, so prefixes of a
    run are reproducible on their own.
    """
    children = np.random.SeedSequence(int(seed)).spawn(int(count))
    return np.array([c.generate_state(1, np.uint64)[0] >> np.uint64(1) for c in children], dtype=np.int64)


def replica_generators(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(c) for c in np.random.SeedSequence(int(seed)).spawn(int(count))]
