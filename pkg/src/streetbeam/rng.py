"""Seeded RNG plumbing: one root seed split into independent named streams.

Every stochastic component pulls from its own named child stream so that
adding a new stream (or reordering draws in one component) never perturbs
the others.
"""

import hashlib
import zlib

import numpy as np


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Return a generator for the named child stream of ``root_seed``."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence((int(root_seed), tag)))


def derive_seed(root_seed: int, *parts) -> int:
    """Deterministic 63-bit seed derived from a root seed and string parts.

    Used to give each (seed, feature-set) training run its own seed without
    coupling runs to each other.
    """
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for p in parts:
        h.update(b"\x00")
        h.update(str(p).encode())
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFFFFFFFFFFFFFF
