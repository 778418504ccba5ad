"""Deterministic random-number substreams for chunked Monte Carlo.

All sampling in this package flows from a single master seed through named
substreams, one per purpose ("hidden-weights", "moment-mc", ...). Each
substream is further split into fixed-size chunks whose generators depend
only on (master seed, stream name, chunk index). Workers may process chunks
in any order; reductions happen in chunk-index order, so results are
bit-identical no matter how many threads run.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

DEFAULT_CHUNK = 8192


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


@dataclass(frozen=True)
class ChunkedStream:
    """A named, seeded stream of independent fixed-size sample chunks.

    `key` carries extra integer entropy (for example the width inside a
    scan) so loops over related runs stay decorrelated while still flowing
    from the one master seed.
    """

    master_seed: int
    name: str
    chunk_size: int = DEFAULT_CHUNK
    key: tuple[int, ...] = ()

    def generator(self, chunk_index: int) -> np.random.Generator:
        seq = np.random.SeedSequence(
            [self.master_seed, _name_key(self.name), *self.key, chunk_index]
        )
        return np.random.Generator(np.random.Philox(seq))

    def chunks(self, total: int) -> Iterator[tuple[int, int, np.random.Generator]]:
        """Yield (chunk_index, count, generator) covering `total` samples."""
        if total < 0:
            raise ValueError("total sample count must be non-negative")
        index = 0
        remaining = total
        while remaining > 0:
            count = min(self.chunk_size, remaining)
            yield index, count, self.generator(index)
            index += 1
            remaining -= count

    def single(self) -> np.random.Generator:
        """One generator for non-chunked draws (forward passes, etc.)."""
        return self.generator(0)


def substream(master_seed: int, name: str, chunk_size: int = DEFAULT_CHUNK) -> ChunkedStream:
    return ChunkedStream(master_seed, name, chunk_size)
