"""Reproducible random streams and replication fan-out.

Every replication owns a stream derived from ``(master_seed, index)`` through
``numpy.random.SeedSequence(master_seed, spawn_key=(index,))``.  The mapping is
index-addressable, so results never depend on the worker count or on the
order in which replications finish.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

_BLOCK = 256


class Stream:
    """Buffered uniform/exponential source on top of a numpy Generator.

    ``uniform()`` returns values in (0, 1].  Buffering keeps the per-draw cost
    low inside the pure-Python event loops.
    """

    __slots__ = ("gen", "_buf", "_i")

    def __init__(self, gen: np.random.Generator):
        self.gen = gen
        self._buf: list[float] = []
        self._i = 0

    @classmethod
    def from_seed(cls, seed: int, index: int | None = None) -> "Stream":
        if index is None:
            ss = np.random.SeedSequence(seed)
        else:
            ss = np.random.SeedSequence(seed, spawn_key=(index,))
        return cls(np.random.Generator(np.random.PCG64(ss)))

    def uniform(self) -> float:
        i = self._i
        if i >= len(self._buf):
            self._buf = (1.0 - self.gen.random(_BLOCK)).tolist()
            i = 0
        self._i = i + 1
        return self._buf[i]

    def exponential(self, rate: float) -> float:
        if rate <= 0.0:
            return math.inf
        return -math.log(self.uniform()) / rate

    def child(self, key: int) -> "Stream":
        """Independent sub-stream (used for the second copy of a coupled pair)."""
        seed = int(self.gen.integers(0, 2**63 - 1))
        return Stream(np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,)))))


def as_stream(rng) -> Stream:
    """Accept a Stream, a numpy Generator or an integer seed."""
    if isinstance(rng, Stream):
        return rng
    if isinstance(rng, np.random.Generator):
        return Stream(rng)
    if rng is None:
        return Stream(np.random.default_rng())
    return Stream.from_seed(int(rng))


def replication_stream(master_seed: int, index: int) -> Stream:
    return Stream.from_seed(master_seed, index)


def _run_chunk(args):
    fn, master_seed, indices, payload = args
    return [fn(replication_stream(master_seed, i), payload) for i in indices]


def replicate(
    fn: Callable[[Stream, object], object],
    reps: int,
    master_seed: int,
    payload=None,
    workers: int = 1,
) -> list:
    """Run ``fn(stream_i, payload)`` for i = 0..reps-1 and return results in index order.

    With ``workers > 1`` the indices are split into contiguous chunks and run in
    a process pool; ``fn`` and ``payload`` must then be picklable.
    """
    if reps < 0:
        raise ValueError("reps must be non-negative")
    if workers <= 1 or reps < 2 * workers:
        return [fn(replication_stream(master_seed, i), payload) for i in range(reps)]
    bounds = np.linspace(0, reps, workers + 1).astype(int)
    chunks: Sequence[range] = [range(bounds[w], bounds[w + 1]) for w in range(workers)]
    out: list = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_run_chunk, [(fn, master_seed, c, payload) for c in chunks]):
            out.extend(part)
    return out
