"""Named random substreams derived from one run seed.

Each consumer (``"init"``, ``"shuffle"``, ``"synth"``, ...) gets its own
generator, so adding a new consumer never shifts the draws of another.
"""

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
