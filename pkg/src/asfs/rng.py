"""Seeded, splittable random streams.

Every random draw in the package comes from a generator built here, keyed by
the run seed plus a tuple of labels (``"pretext", "mask", epoch`` ...). Two
streams with different keys are statistically independent, and the same key
always yields the same stream, regardless of the order in which streams are
requested.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"negative stream key {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Return the generator for stream ``keys`` under ``seed``."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))
