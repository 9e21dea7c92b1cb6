"""Deterministic sub-seed derivation for independent RNG streams.

Every stochastic component takes a seed derived from the master seed and
a descriptive label, so that runs are reproducible end to end and streams
stay independent when arms execute in parallel.
"""

from __future__ import annotations

import hashlib


def derive_seed(master_seed: int, *labels: object) -> int:
    """Stable 64-bit sub-seed from a master seed and a label path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master_seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "big")
