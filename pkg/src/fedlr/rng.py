"""Keyed, counter-based random streams.

Every random draw in the simulator comes from a stream identified by
``(master seed, purpose, *counters)``.  Streams are Philox generators whose
128-bit key is derived from that tuple, so the numbers a client sees in a
given round do not depend on which worker ran it or in what order.
"""

from __future__ import annotations

import zlib

import numpy as np

# purpose tags used across the package; kept here so collisions are visible
INIT_ITEMS = "init-items"
INIT_USER = "init-user"
EVAL_NEGATIVES = "eval-negatives"
TRAIN = "train"
PROJECTION = "projection"
SELECTION = "selection"
LOCAL_RANK = "local-rank"
COHORT = "cohort"
KEYGEN = "keygen"
SYNTHETIC = "synthetic"
BENCH = "bench"


def _purpose_id(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *counters: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, purpose, *counters)``.

    Identical arguments always give a bitwise-identical sequence.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    for c in counters:
        if c < 0:
            raise ValueError("stream counters must be non-negative")
    ss = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(_purpose_id(purpose), *map(int, counters))
    )
    key = ss.generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def int_seed(seed: int, purpose: str, *counters: int) -> int:
    """A 64-bit integer derived from the same key space as :func:`stream`."""
    ss = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(_purpose_id(purpose), *map(int, counters))
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])
