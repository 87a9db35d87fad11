"""Named random substreams derived from a single master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(seed: int, *names) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(_key(n) for n in names))


def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``; stable across runs and platforms."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *names)))


def derive_seed(seed: int, *names) -> int:
    """A 64-bit integer seed for ``(seed, *names)``."""
    state = seed_sequence(seed, *names).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 32) | int(state[1])
