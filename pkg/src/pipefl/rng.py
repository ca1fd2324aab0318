"""Seeded random streams.

One root seed feeds independent Philox streams keyed by purpose, so extra
draws for one purpose (say, evaluation) never shift another (sampling).
"""

from __future__ import annotations

import numpy as np

SAMPLING = 0
DATA = 1
INIT = 2


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(purpose, index))
    return np.random.Generator(np.random.Philox(ss))
