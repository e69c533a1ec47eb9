"""Counter-based random streams.

Every random draw in the engine comes from a Philox generator keyed by a
structured tuple (master seed, policy, replication, firm, period, purpose).
Any subset of replications therefore reproduces identically, independent of
scheduling or how many other streams were consumed.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "key_int"]


def key_int(part) -> int:
    """Map a key component (int or short string) to a stable uint32."""
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported stream key component: {part!r}")


def stream(master_seed: int, *key) -> np.random.Generator:
    """Return an independent Philox generator for the given key tuple."""
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [key_int(k) for k in key]
    ss = np.random.SeedSequence(entropy)
    return np.random.Generator(np.random.Philox(ss))
