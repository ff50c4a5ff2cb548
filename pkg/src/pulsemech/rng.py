"""Counter-based random streams.

A stream is identified by a master seed and a tuple of integer keys, e.g.
``(angle_index, block_index)``. Streams with different keys are
statistically independent and do not depend on the order in which they are
created, so blocks of repetitions can run in any order or concurrently.
"""
from __future__ import annotations

import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return a Philox generator for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def block_sizes(total: int, block: int) -> list[int]:
    """Split ``total`` repetitions into fixed-size blocks (last one shorter)."""
    if total < 0:
        raise ValueError("total must be non-negative")
    sizes = [block] * (total // block)
    if total % block:
        sizes.append(total % block)
    return sizes
