"""Reproducible random streams.

Every stochastic step draws from a generator keyed by ``(seed, *stream)`` so
that results never depend on execution order or thread scheduling.
"""

import numpy as np


def rng_stream(seed: int, *stream: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and a hierarchical stream id.

    Distinct stream tuples give independent sequences (SeedSequence spawn
    keys); identical tuples give identical sequences on every platform.
    """
    if seed < 0 or any(s < 0 for s in stream):
        raise ValueError("seed and stream ids must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))
