"""Labeled sub-seeds: every random stage draws from its own stream of the run seed."""

from __future__ import annotations

import hashlib

import numpy as np

SPLIT = "split"
INIT = "init"
SHUFFLE = "shuffle"
DROPOUT = "dropout"


def derive_seed(seed: int, label: str, *counters: int) -> int:
    key = ":".join([str(int(seed)), label, *(str(int(c)) for c in counters)])
    return int.from_bytes(hashlib.sha256(key.encode("ascii")).digest()[:8], "little")


def generator(seed: int, label: str, *counters: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, label, counters...)``."""
    return np.random.Generator(np.random.Philox(derive_seed(seed, label, *counters)))
