"""Seeded, keyed random streams.

Every stream is a PCG64 generator seeded from ``SeedSequence(seed,
spawn_key=key)``.  Keys are tuples of ints or strings (strings are hashed with
CRC32 so they are stable across processes and Python versions), which makes
substreams for ``(replication, model, "chain")`` independent of the order in
which jobs are scheduled.
"""
from __future__ import annotations

import zlib

import numpy as np

__all__ = ["RngStream", "as_stream"]


def _key_part(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


class RngStream:
    """Thin wrapper around :class:`numpy.random.Generator` with keyed substreams."""

    def __init__(self, seed: int = 0, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(_key_part(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def substream(self, *key) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(_key_part(k) for k in key))

    @property
    def bit_generator(self):
        return self.generator.bit_generator

    # Convenience passthroughs used by the samplers.
    def random(self, size=None):
        return self.generator.random(size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def standard_exponential(self, size=None):
        return self.generator.standard_exponential(size)

    def standard_gamma(self, shape, size=None):
        return self.generator.standard_gamma(shape, size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


def as_stream(rng) -> RngStream:
    """Accept an ``RngStream``, an int seed or ``None``."""
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0)
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError(f"cannot make a random stream from {type(rng).__name__}")
