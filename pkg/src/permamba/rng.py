"""Deterministic random streams.

All randomness in the package flows through :func:`stream`. A stream is
identified by (seed, tag, counter): the global run seed, a short purpose
string ("noise", "shuffle", "dropout", ...), and an integer for repeated
draws under the same purpose (sample index, epoch number). Philox is
counter-based and splittable, so distinct keys give independent streams and
the same key always replays the same sequence, on any platform.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "tag_key"]


def tag_key(tag: str) -> int:
    """Stable 32-bit key for a purpose tag (crc32, not Python's hash)."""
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, tag: str, counter: int = 0) -> np.random.Generator:
    """Return the generator for (seed, tag, counter).

    Args:
        seed: global run seed, any non-negative int.
        tag: purpose label; different tags never share a stream.
        counter: index for repeated draws under one tag.
    """
    if seed < 0 or counter < 0:
        raise ValueError("seed and counter must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag_key(tag), int(counter)))
    return np.random.Generator(np.random.Philox(ss))
