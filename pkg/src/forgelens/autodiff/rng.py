"""Seeded, counter-based random number generation.

All stochastic behavior in the package flows through generators built
here. The underlying bit generator is Philox (counter-based), so streams
are reproducible across platforms and independent streams can be derived
from one user-facing seed without any global state.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "make_rng"]


def derive_seed(seed: int, name: str) -> int:
    """Derive a 64-bit stream seed from a base seed and a stream name.

    The mapping is sha256(f"{seed}:{name}") truncated to 8 bytes, so the
    same (seed, name) pair always yields the same stream and distinct
    names yield statistically independent streams.
    """
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, name: str | None = None) -> np.random.Generator:
    """Build a Philox generator for the given seed and optional stream name."""
    key = derive_seed(seed, name) if name is not None else seed
    return np.random.Generator(np.random.Philox(key=key))
