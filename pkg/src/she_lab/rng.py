"""Counter-based random streams.

Every stream is addressed by a master seed plus an integer key such as
``(replica, shell, time_cell)`` and backed by a Philox generator, so draws do
not depend on the order in which streams are requested.
"""

from __future__ import annotations

import numpy as np


class StreamFactory:
    def __init__(self, seed: int):
        self.seed = int(seed)

    def generator(self, *key: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.Philox(ss))

    def __repr__(self) -> str:
        return f"StreamFactory(seed={self.seed})"
