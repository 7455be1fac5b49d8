"""Deterministic sub-seed derivation for pipeline stages.

A single global seed fans out into independent per-stage, per-graph streams.
Derivation is counter-based (seed + hashed path components feed a
``SeedSequence``), so the order in which stages or graphs are processed never
changes the streams they receive.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _encode(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & _MASK64


def subseed(seed: int, *path: int | str) -> int:
    """Derive a 64-bit sub-seed for the given (stage, index, ...) path."""
    entropy = [_encode(seed)] + [_encode(p) for p in path]
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stage_rng(seed: int, *path: int | str) -> np.random.Generator:
    """Seeded generator for one stage/graph slot."""
    return np.random.default_rng(subseed(seed, *path))
