"""Seed plumbing. Every random choice flows from one master seed.

Each consumer gets its own generator derived from (seed, namespace tag, *ids),
so adding a phase never shifts the randomness of existing ones.
"""

from __future__ import annotations

import numpy as np

# namespace tags; values are part of the reproducibility contract
STREAM = 1
BACKBONE = 2
ADAPTER = 3
ADAPTER_HEAD = 4
GATE = 5
BUFFER = 6
ABLATION = 7
FEATURE_HEAD = 8
BASELINE = 9
SHUFFLE = 10


def child_rng(seed: int, *tags: int) -> np.random.Generator:
    """Generator for one consumer, decorrelated from all other tag paths."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, tags)])))
