"""
Counter-based random streams

Every random draw in the package comes from a generator keyed by an integer
tuple (master seed, purpose, keys...). The same key always yields the same
stream, so results never depend on which worker ran what, or in which order.
"""
from __future__ import annotations

from enum import IntEnum
from typing import Sequence

import numpy as np


class Purpose(IntEnum):
    """What a stream is used for; part of every stream key"""

    FIELD = 1
    PATH = 2
    START = 3


# Block sizes for keyed generation
FIELD_BLOCK = 16  # cells per side of one field generation block
PATH_BLOCK = 1024  # path indices per jump-path stream
PROFILE_BLOCK = 8192  # samples per angle node in one kinetic profile stream


def _zigzag(value: int) -> int:
    value = int(value)
    return 2 * value if value >= 0 else -2 * value - 1


def stream_key(seed: int, purpose: Purpose, *keys: int) -> Sequence[int]:
    seed = int(seed)
    # SeedSequence entropy words are 32-bit; split the 64-bit master seed
    return [seed & 0xFFFFFFFF, seed >> 32, int(purpose)] + [_zigzag(k) for k in keys]


def stream(seed: int, purpose: Purpose, *keys: int) -> np.random.Generator:
    """Philox generator for the key (seed, purpose, *keys)"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(stream_key(seed, purpose, *keys))))
