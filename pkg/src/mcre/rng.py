"""Seeded random-number streams.

One global seed fans out into independent named streams (``split``,
``init``, ``shuffle``, ``dropout``, ...) so that adding a new consumer of
randomness never perturbs the draws seen by existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(name: str) -> int:
    """Stable 64-bit key for a stream name; independent of the seed."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for the named stream; same (seed, name) -> same draws."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, stream_key(name)]))
