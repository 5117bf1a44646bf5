"""Named substream derivation so every random consumer gets its own seed.

Python's builtin hash() is salted per process; blake2b keeps derived seeds
stable across runs and machines.
"""

import hashlib

import numpy as np


def derive_seed(base: int, name: str) -> int:
    digest = hashlib.blake2b(f"{base}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") % (2 ** 31)


def substream(base: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, name))
