"""Counter-based random streams.

Every random draw in this package flows through a :class:`RngStream`, which is
a thin wrapper over the Philox counter-based generator.  A stream is addressed
by ``(seed, purpose)`` and a counter; re-creating a stream with the same
address and counter reproduces its draws bit-for-bit on every platform, which
is what makes interrupted training runs resumable without drift.

Purposes are fixed small integers so that toggling one consumer (say,
conditioning dropout) cannot perturb the draws seen by another (noise, data
order, ...).
"""
from __future__ import annotations

import numpy as np

# Stable purpose ids; append only, never renumber.
INIT = 0
NOISE = 1
SIGMA = 2
DROPOUT = 3
DATA = 4
SAMPLE = 5

_PURPOSES = {INIT, NOISE, SIGMA, DROPOUT, DATA, SAMPLE}


class RngStream:
    """One addressable random stream.

    ``counter`` is typically the global training step: stream ``(seed, NOISE)``
    at counter 17 always yields the noise of step 17, no matter how many times
    the process has been restarted in between.
    """

    def __init__(self, seed: int, purpose: int, counter: int = 0):
        if purpose not in _PURPOSES:
            raise ValueError(f"unknown rng purpose {purpose}")
        self.seed = int(seed)
        self.purpose = int(purpose)
        self.counter = int(counter)
        key = np.array([self.seed, self.purpose], dtype=np.uint64)
        bitgen = np.random.Philox(key=key)
        bitgen.advance(self.counter * (1 << 32))
        self._gen = np.random.Generator(bitgen)

    def at(self, counter: int) -> "RngStream":
        """Same stream re-addressed at a different counter."""
        return RngStream(self.seed, self.purpose, counter)

    def uniform(self, shape=(), dtype=np.float64) -> np.ndarray:
        return self._gen.random(size=shape, dtype=np.float64).astype(dtype)

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64).astype(dtype)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


class RngStreams:
    """The bundle of per-purpose streams used by a training run."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def get(self, purpose: int, counter: int = 0) -> RngStream:
        return RngStream(self.seed, purpose, counter)

    def init(self) -> RngStream:
        return self.get(INIT)

    def noise(self, step: int) -> RngStream:
        return self.get(NOISE, step)

    def sigma(self, step: int) -> RngStream:
        return self.get(SIGMA, step)

    def dropout(self, step: int) -> RngStream:
        return self.get(DROPOUT, step)

    def data(self, step: int) -> RngStream:
        return self.get(DATA, step)

    def sample(self, counter: int = 0) -> RngStream:
        return self.get(SAMPLE, counter)
