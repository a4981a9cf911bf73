"""Counter-based random streams keyed by (seed, purpose label, index).

Every random draw in the package comes from a stream obtained here. Streams
are independent Philox generators keyed by hashing (seed, label, index), so
adding, removing, or disabling one consumer never shifts the numbers any
other consumer sees. Philox is a counter-based generator with a fixed
algorithm, which keeps streams bit-identical across platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ArgumentError


def stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Return the generator for one named purpose.

    The Philox key is the first 128 bits of SHA-256 over ``"seed/label/index"``,
    so the mapping from names to streams is stable everywhere.
    """
    if not label:
        raise ArgumentError("stream label must be non-empty")
    digest = hashlib.sha256(f"{seed}/{label}/{index}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))
