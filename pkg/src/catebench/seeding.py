"""Counter-based seed derivation.

Every random stream in the package is seeded from ``derive_seed(master, path)``
where ``path`` is a tuple of non-negative integers naming the consumer
(setting, draw, estimator, repetition, tree, ...).  The mapping is a keyed
BLAKE2b hash of fixed-width little-endian words, so it does not depend on
platform, process, or the order in which tasks happen to execute.
"""

from __future__ import annotations

import hashlib
from collections.abc import Iterable

import numpy as np

_MASK64 = (1 << 64) - 1


def _word(value: int) -> bytes:
    value = int(value)
    if value < 0 or value > _MASK64:
        raise ValueError(f"seed component {value} outside [0, 2**64)")
    return value.to_bytes(8, "little")


def derive_seed(master_seed: int, components: Iterable[int] = ()) -> int:
    """Mix ``master_seed`` with an integer path into a 64-bit seed."""
    parts = [_word(master_seed)] + [_word(c) for c in components]
    h = hashlib.blake2b(digest_size=8, person=b"catebench")
    h.update(len(parts).to_bytes(4, "little"))
    for p in parts:
        h.update(p)
    return int.from_bytes(h.digest(), "little")


def rng_from(master_seed: int, components: Iterable[int] = ()) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, components))
