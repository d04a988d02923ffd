import zlib

import numpy as np


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for a named purpose (walk, noise, minibatch, ...)."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode()), *map(int, index)]
    return np.random.default_rng(np.random.SeedSequence(key))
