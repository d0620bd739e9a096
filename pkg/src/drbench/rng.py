"""Deterministic random-number substreams.

Every stochastic component in the package draws from a counter-based
generator (Philox) keyed by an explicit tuple, so results never depend on
thread scheduling or call order between tasks.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "stream_key"]


def _as_word(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        # SeedSequence wants nonnegative entropy words
        return int(part) & 0xFFFFFFFFFFFFFFFF
    raise TypeError(f"stream key parts must be int or str, got {type(part).__name__}")


def stream_key(*parts) -> tuple[int, ...]:
    """Normalize a mixed int/str key to the entropy words that seed a stream."""
    if not parts:
        raise ValueError("stream key must have at least one part")
    return tuple(_as_word(p) for p in parts)


def substream(*parts) -> np.random.Generator:
    """Return an independent generator for the stream named by ``parts``.

    Identical parts always yield a bit-identical stream; distinct parts give
    statistically independent streams.
    """
    seq = np.random.SeedSequence(stream_key(*parts))
    return np.random.Generator(np.random.Philox(seed=seq))
