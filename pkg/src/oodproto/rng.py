"""Deterministic randomness: one run seed, per-component substreams.

Every random draw in the engine comes from a counter-based Philox stream
keyed by (seed, sha256(component_name)). The derivation is stable across
platforms and runs, so a single config seed fully determines training,
world generation, and initialization.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def subseed(seed: int, name: str) -> int:
    """Derive a 64-bit subseed for a named component."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") ^ (seed & _MASK64)


def generator(seed: int, name: str) -> np.random.Generator:
    """Philox generator for component `name` under run seed `seed`."""
    key = np.array([seed & _MASK64, subseed(seed, name)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
