"""Seed derivation so that work split across threads draws the same numbers as serial runs."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*keys: int | str) -> int:
    """Deterministic 63-bit seed from a master seed and any number of keys."""
    ints = []
    for k in keys:
        if isinstance(k, str):
            ints.append(int.from_bytes(hashlib.sha256(k.encode()).digest()[:8], "big"))
        else:
            ints.append(int(k) & 0xFFFFFFFFFFFFFFFF)
    state = np.random.SeedSequence(ints).generate_state(1, dtype=np.uint64)[0]
    return int(state) >> 1


def rng_for(*keys: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*keys))
