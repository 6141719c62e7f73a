"""Keyed random streams.

Every random draw in the package goes through :func:`make_rng` so that a
result depends only on ``(seed, *key)`` and never on call order or on how
replicates are distributed across workers.
"""

import zlib

import numpy as np


def _as_int(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def make_rng(seed, *key):
    """Return a Philox generator for the stream ``(seed, *key)``.

    String key parts are hashed with CRC32 so experiments can be named.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_as_int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
