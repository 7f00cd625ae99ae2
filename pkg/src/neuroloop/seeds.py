"""Seed derivation.

Every random stream in the package comes from one integer root seed. A stream
for a named consumer is obtained by hashing the consumer's name path with
CRC-32 and passing the hashes as the ``spawn_key`` of a
:class:`numpy.random.SeedSequence`::

    derive_seed(root, "protocol", "plan", 3)
        == SeedSequence(root, spawn_key=(crc32(b"protocol"), crc32(b"plan"), 3))
           .generate_state(1, dtype=uint64)[0]

Integer path components are used as-is; strings go through CRC-32.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: str | int) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(root: int, *path: str | int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root), spawn_key=tuple(_key(p) for p in path))


def derive_seed(root: int, *path: str | int) -> int:
    """Return a 63-bit integer seed for the stream named by ``path``."""
    state = seed_sequence(root, *path).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))


def derive_rng(root: int, *path: str | int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(root, *path))
