"""Seeded, splittable random streams.

Every sampler in the package draws through an :class:`RngHandle`. Handles are
built on numpy's SeedSequence/PCG64 so that (a) equal seeds give bit-identical
draw sequences and (b) spawned child streams are independent by construction,
which is what lets folds and chains run concurrently without sharing state.
"""

from __future__ import annotations

import numpy as np


class RngHandle:
    """A seeded random stream.

    Parameters
    ----------
    seed : int or None
        Root seed. Two handles created with the same seed produce identical
        draw sequences from every operation in this package.
    """

    def __init__(self, seed=None, _seq: np.random.SeedSequence | None = None):
        if _seq is None:
            _seq = np.random.SeedSequence(seed)
        self.seq = _seq
        self.seed = seed if seed is not None else _seq.entropy
        self.gen = np.random.Generator(np.random.PCG64(_seq))

    def spawn(self, n: int) -> list["RngHandle"]:
        """Return `n` statistically independent child handles."""
        return [RngHandle(_seq=child) for child in self.seq.spawn(n)]

    def __repr__(self):
        return f"RngHandle(seed={self.seed!r})"
