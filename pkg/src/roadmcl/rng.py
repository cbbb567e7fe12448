"""Named, seed-derived random streams.

Every random draw in a run descends from one integer seed. Each consumer
asks for its own stream by name (plus optional integer indices, e.g. a step
number), so adding a consumer never perturbs the others.
"""

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream_key(name), *map(int, index)))
    return np.random.default_rng(ss)
