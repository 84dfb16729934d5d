"""Deterministic per-consumer RNG streams derived from one run seed.

Every source of randomness in a run (synthesis, shuffling, undersampling,
weight init, augmentation, dropout) draws from its own named stream so that
components reproduce in isolation and adding a consumer never shifts the
draws seen by another.
"""

import hashlib

import numpy as np


def stream(seed: int, *names: str) -> np.random.Generator:
    """Return the RNG stream identified by ``names`` under ``seed``.

    The name tuple is hashed with sha256 (never Python's randomized hash)
    so streams are stable across processes and platforms.
    """
    digest = hashlib.sha256("/".join(names).encode("utf-8")).digest()
    words = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=words))
