"""Seed derivation shared by every randomized step.

A child seed is a pure function of the master seed and a tuple of keys.
String keys are folded to integers with CRC-32, so a job's randomness
depends only on its own identity (condition name, SNR index, utterance
index), never on scheduling order or worker count.
"""

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    k = int(k)
    if k < 0:
        raise ValueError(f"seed keys must be non-negative, got {k}")
    return k


def derive_seed(master: int, *keys) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
