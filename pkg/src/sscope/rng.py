"""Deterministic named random streams.

Every source of randomness in the package draws from a stream addressed by
(master_seed, *labels). Streams are backed by Philox, a counter-based
generator, so distinct label paths are statistically independent and a
stream's output depends only on its address -- never on how many other
streams were consumed before it. This is what makes lockstep training and
its direct-run oracles bit-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "subseed"]


def _digest(master_seed: int, labels: tuple) -> bytes:
    parts = [str(int(master_seed))]
    for lab in labels:
        if not isinstance(lab, (str, int)):
            raise TypeError(f"stream labels must be str or int, got {type(lab)!r}")
        parts.append(f"{type(lab).__name__}:{lab}")
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()


def stream(master_seed: int, *labels) -> np.random.Generator:
    """Return the generator addressed by (master_seed, *labels)."""
    d = _digest(master_seed, labels)
    key = np.frombuffer(d, dtype=np.uint64)[:2]
    return np.random.Generator(np.random.Philox(key=key))


def subseed(master_seed: int, *labels) -> int:
    """Derive a child integer seed (for APIs that take a plain seed)."""
    d = _digest(master_seed, labels)
    return int.from_bytes(d[:8], "little")
