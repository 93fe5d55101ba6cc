"""
Counter-based random streams.

A stream is a seed plus a key path such as (level, replicate, component, role).
Each distinct key yields an independent Philox generator, so results do not
depend on the order or the thread in which replicates are drawn.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple

import numpy as np

from .errors import InvalidInputError


class Role(IntEnum):
    """Purpose slot in a stream key."""

    THETA = 0
    THETA_HAT = 1
    NOISE = 2
    SCALED = 3
    DRIVER = 4


@dataclass(frozen=True)
class RngStream:
    seed: int
    key: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2**64:
            raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if any(k < 0 for k in self.key):
            raise InvalidInputError(f"stream key entries must be non-negative: {self.key}")

    def child(self, *key: int) -> "RngStream":
        """Stream for a sub-key; children with different keys never overlap."""
        return RngStream(self.seed, self.key + tuple(int(k) for k in key))

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.Philox(sequence))
