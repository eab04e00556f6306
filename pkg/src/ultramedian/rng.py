"""Seeded random streams.

Every stream is a PCG64 generator keyed by a tuple of integers through
numpy's ``SeedSequence`` hashing, so ``(seed, *keys)`` fully determines the
draws on every platform.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _word(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & _MASK64


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Return a PCG64 generator for the stream ``hash(seed, *keys)``."""
    entropy = [_word(seed), *(_word(k) for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys: int | str) -> int:
    """Derive a child 64-bit seed, e.g. one per trial of a batch."""
    entropy = [_word(seed), *(_word(k) for k in keys)]
    state = np.random.SeedSequence(entropy).generate_state(1, np.uint64)
    return int(state[0])
