"""Keyed random streams.

Every random decision in a run draws from a stream derived from
``(master_seed, purpose, *ids)`` instead of a shared generator, so results
do not depend on the order in which clients are processed.
"""
from __future__ import annotations

import numpy as np

# purpose tags; values are part of the reproducibility contract, do not renumber
SPLIT = 1
PARTITION = 2
CAPACITY = 3
INIT = 4
AVAILABILITY = 5
SELECTION = 6
FAILURE = 7
SHUFFLE = 8
NOISE = 9


def stream(master_seed: int, purpose: int, *ids: int) -> np.random.Generator:
    """Return a fresh generator for the given key.

    Two calls with the same key always produce identical sequences.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(purpose), *(int(i) for i in ids)))
    return np.random.Generator(np.random.PCG64(seq))


def derived_seed(master_seed: int, purpose: int, *ids: int) -> int:
    return int(stream(master_seed, purpose, *ids).integers(0, 2**63 - 1))
