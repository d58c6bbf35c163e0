"""Deterministic sub-seed derivation from one 64-bit master seed.

Every random draw in an analysis flows from ``derive_seed(master, tag,
index)``, where the tag names the purpose (e.g. ``"hybrid"``) and the index
distinguishes instances (e.g. a player-subset bitmask or repeat number).
Identical inputs always yield identical sub-seeds, across runs and
platforms.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, tag: str, index: int = 0) -> int:
    entropy = [master & _MASK64, zlib.crc32(tag.encode("utf-8")), index & _MASK64]
    seq = np.random.SeedSequence(entropy)
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def derive_rng(master: int, tag: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, tag, index))
