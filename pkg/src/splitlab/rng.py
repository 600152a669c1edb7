"""Named, splittable random streams.

Every component draws from its own Philox stream keyed by ``(seed, name)``,
so adding a consumer never shifts the numbers another consumer sees.
"""

from __future__ import annotations

import zlib

import numpy as np


def _name_key(name: str) -> list[int]:
    # crc32 per dotted part keeps keys stable across Python processes
    return [zlib.crc32(part.encode("utf-8")) for part in name.split(".")]


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for component ``name`` under ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=_name_key(name))
    return np.random.Generator(np.random.Philox(ss))
