"""Seedable counter-based random streams.

Every stochastic operation takes an explicit ``numpy.random.Generator``.
Streams are derived from ``(seed, name)`` so that adding a new consumer
never shifts the draws seen by an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np


def _stream_key(name: str | int) -> int:
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed: int, *stream: str | int) -> np.random.Generator:
    """Return a Philox-backed generator for the named stream of ``seed``."""
    entropy = [int(seed)] + [_stream_key(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

