"""Counter-based, splittable random streams.

Every random draw in an experiment comes from a Philox generator keyed by a
tuple of non-negative integers, typically ``(seed, n, sample_index)``.  The
same key always produces the same stream, independent of how many other
streams were created or in which order, so sample generation can be
reordered or parallelised without changing results.
"""

from __future__ import annotations

import numpy as np

# Namespaces keep streams used for different purposes disjoint.
PATHS = 1
BROWNIAN = 2
BOOTSTRAP = 3
FLOOR = 4
AUX = 5


def stream(*key: int) -> np.random.Generator:
    """Return the generator for ``key``; all entries must be ints >= 0."""
    if not key:
        raise ValueError("stream key must be non-empty")
    words = [int(k) for k in key]
    if any(k < 0 for k in words):
        raise ValueError(f"stream key entries must be non-negative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def streams(count: int, *prefix: int) -> list[np.random.Generator]:
    """Generators for ``prefix + (i,)`` with ``i`` in ``range(count)``."""
    return [stream(*prefix, i) for i in range(count)]


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return stream(int(rng))
    raise TypeError(f"expected numpy Generator or int seed, got {type(rng).__name__}")
