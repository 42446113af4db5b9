"""Deterministic substream derivation: one generator per (seed, *tags)."""

from __future__ import annotations

import hashlib

import numpy as np


def seeded_rng(*parts) -> np.random.Generator:
    """A PCG64 generator keyed by the repr of the given parts."""
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
