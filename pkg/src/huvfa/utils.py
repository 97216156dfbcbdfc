"""Seeding and input validation helpers."""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator for a named stage derived from one root seed.

    Names are hashed with CRC32 so the mapping is stable across processes
    (``hash()`` is salted per interpreter).
    """
    keys = [zlib.crc32(str(n).encode()) for n in names]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *keys]))


def check_tensor(X, min_order: int = 2) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim < min_order:
        raise ValueError(f"expected a tensor of order >= {min_order}, got shape {X.shape}")
    if X.size == 0:
        raise ValueError("empty tensor")
    if not np.all(np.isfinite(X)):
        raise ValueError("tensor contains non-finite entries")
    return X
