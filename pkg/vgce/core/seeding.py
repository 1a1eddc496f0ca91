"""
Per-purpose random streams derived from one master seed.
"""

import zlib

import numpy as np

PURPOSES = ("init", "reparam", "shuffle", "negatives", "synthetic", "retrieval", "bench")


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent generator for ``purpose``; the same (seed, purpose) always yields the same draws."""
    if purpose not in PURPOSES:
        raise ValueError(f"unknown random stream purpose: {purpose}")
    tag = zlib.crc32(purpose.encode("ascii"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))
