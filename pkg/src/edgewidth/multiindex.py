"""Enumeration of even-order multi-indices and their arrangements.

The correction terms of the expansion are indexed by compositions J of an
even integer 2k into p non-negative parts, and by the distinct sequences
alpha of length 2k in which the value s appears exactly J[s] times. Both
enumerations are deterministic so downstream CSV artifacts are reproducible
bit for bit.

Block-diagonal covariance deviations make most sequences vanish: an entry
(a, b) of a block matrix with n blocks of size d is zero unless a and b fall
in the same block. `block_admissible` is the corresponding filter.
"""

from __future__ import annotations

import math
from itertools import permutations
from typing import Iterator

MultiIndex = tuple[int, ...]
IndexTuple = tuple[int, ...]

MAX_SLOTS = 8
MAX_HALF_ORDER = 4


def _check_scale(p: int, k: int) -> None:
    if p < 1:
        raise ValueError(f"slot count must be >= 1, got {p}")
    if k < 1:
        raise ValueError(f"half-order must be >= 1, got {k}")
    if p > MAX_SLOTS or k > MAX_HALF_ORDER:
        raise ValueError(
            f"enumeration capped at {MAX_SLOTS} slots and half-order "
            f"{MAX_HALF_ORDER}; got p={p}, k={k}"
        )


def _compositions(total: int, parts: int) -> Iterator[MultiIndex]:
    # First slot varies slowest and counts down, which puts (2k, 0, ..., 0)
    # first, matching the fixed output ordering promised to callers.
    if parts == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


def enumerate_S(p: int, k: int) -> list[MultiIndex]:
    """All compositions of 2k into p non-negative parts.

    The count is C(2k + p - 1, p - 1). Ordering is fixed: the first slot
    decreases from 2k to 0, recursively, e.g. enumerate_S(2, 1) gives
    [(2, 0), (1, 1), (0, 2)].
    """
    _check_scale(p, k)
    return list(_compositions(2 * k, p))


def enumerate_A(J: MultiIndex) -> list[IndexTuple]:
    """All distinct sequences with value s appearing J[s] times, 1-based.

    Ascending lexicographic order; the count is (2k)!/(j_1! ... j_p!).
    """
    order = sum(J)
    if order % 2 != 0:
        raise ValueError(f"multi-index must have even order, got {J}")
    if any(j < 0 for j in J):
        raise ValueError(f"multi-index entries must be non-negative, got {J}")
    _check_scale(len(J), max(order // 2, 1))
    base = [s + 1 for s, j in enumerate(J) for _ in range(j)]
    return sorted(set(permutations(base)))


def count_S(p: int, k: int) -> int:
    return math.comb(2 * k + p - 1, p - 1)


def count_A(J: MultiIndex) -> int:
    order = sum(J)
    denom = math.prod(math.factorial(j) for j in J)
    return math.factorial(order) // denom


def counts_of(alpha: IndexTuple, p: int) -> MultiIndex:
    """Occurrence counts of each value 1..p in alpha (inverse of enumerate_A)."""
    counts = [0] * p
    for a in alpha:
        if not 1 <= a <= p:
            raise ValueError(f"entry {a} outside 1..{p}")
        counts[a - 1] += 1
    return tuple(counts)


def block_admissible(alpha: IndexTuple, block_dim: int) -> bool:
    """True iff every consecutive pair of alpha lies within one d-block.

    Entries are 1-based coordinates of an (n*d)-dimensional vector split into
    n blocks of size d; pair (a, b) survives a block-diagonal matrix entry
    lookup only when (a-1)//d == (b-1)//d.
    """
    if len(alpha) % 2 != 0:
        raise ValueError("index tuple must have even length")
    for r in range(0, len(alpha), 2):
        if (alpha[r] - 1) // block_dim != (alpha[r + 1] - 1) // block_dim:
            return False
    return True


def block_tuples(p: int, k: int, block_dim: int) -> Iterator[IndexTuple]:
    """Raw tuples alpha in {1..p}^(2k) passing the block filter.

    This is the production summation path for the expansion: iterating raw
    tuples and skipping inadmissible ones is equivalent to the nested
    (J, arrangements) double sum because sum over J of |A_J| = p^(2k).
    """
    _check_scale(p, k)
    if block_dim < 1 or p % block_dim != 0:
        raise ValueError(f"slot count {p} is not a multiple of block size {block_dim}")
    n_blocks = p // block_dim
    block_pairs = [
        (i * block_dim + a, i * block_dim + b)
        for i in range(n_blocks)
        for a in range(1, block_dim + 1)
        for b in range(1, block_dim + 1)
    ]

    def rec(prefix: IndexTuple, remaining: int) -> Iterator[IndexTuple]:
        if remaining == 0:
            yield prefix
            return
        for pair in block_pairs:
            yield from rec(prefix + pair, remaining - 1)

    yield from rec((), k)
