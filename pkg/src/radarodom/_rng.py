"""Named random streams fanned out from one top-level seed."""
import zlib

import numpy as np


def stream(seed: int, *names) -> np.random.Generator:
    """Independent generator for ``(seed, names...)``.

    Each name is hashed into the seed sequence, so adding a new consumer
    never shifts the draws seen by existing ones.
    """
    keys = [int(seed) & 0xFFFFFFFF]
    keys += [n if isinstance(n, int) else zlib.crc32(str(n).encode()) for n in names]
    return np.random.default_rng(np.random.SeedSequence(keys))
