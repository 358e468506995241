"""Counter-based random streams keyed by arbitrary tuples.

Every consumer derives its own ``numpy.random.Generator`` from
``(seed, *keys)`` so results never depend on evaluation order or on how work
is split across threads.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_NONE_WORD = 0x9E3779B97F4A7C15


def _word(key) -> int:
    if key is None:
        return _NONE_WORD
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    if isinstance(key, str):
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"unsupported stream key {key!r}")


def stream(seed: int, *keys) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *keys)``."""
    words = [_word(seed)] + [_word(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
