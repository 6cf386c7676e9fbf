"""Named random streams derived from one integer seed.

Each consumer asks for its own stream by name, so adding a new consumer
never shifts the draws of an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np

from plaplab.errors import InvalidArgument

__all__ = ["stream"]


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by (seed, crc32(name))."""
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise InvalidArgument(f"seed must be a non-negative integer, got {seed!r}")
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
