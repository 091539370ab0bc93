"""Per-purpose seeds derived from one master seed.

``derive_seed(master, purpose)`` hashes the purpose string with CRC-32 and
mixes it into the master seed with the splitmix64 finalizer, so adding a new
purpose never shifts the seeds of existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, purpose: str) -> int:
    tag = zlib.crc32(purpose.encode("utf-8"))
    return splitmix64((int(master) & MASK64) ^ (tag << 32 | tag)) >> 1  # keep it in int64 range


def rng_for(master: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, purpose))
