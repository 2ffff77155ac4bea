"""
Seed splitting: one master seed derives every random stream of a run.

A stream is identified by a name; its generator is seeded with
SeedSequence([master, crc32(name)]) so adding a new stream never shifts the
numbers drawn by existing ones.
"""

import zlib
from typing import Union

import numpy as np

SeedLike = Union[int, np.integer, np.random.Generator, None]


def as_generator(seed: SeedLike) -> np.random.Generator:
    """Return a Generator for an int seed, or the generator itself"""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def derive_seed(master: int, name: str) -> int:
    """Derive a 32-bit integer seed for the named stream"""
    seq = np.random.SeedSequence([int(master), stream_key(name)])
    return int(seq.generate_state(1)[0])


def derive_rng(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master), stream_key(name)]))
