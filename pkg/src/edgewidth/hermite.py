"""Probabilists' Hermite polynomials and Gaussian product moments.

Evaluation uses the three-term recurrence H_{j+1}(x) = x H_j(x) - j H_{j-1}(x).
Exact integer coefficients are available separately as a cross-check oracle
and for closed-form curve assembly.

The two moment routines implement the lemma pair used throughout the
expansion machinery: expectations of Hermite products under a centered
Gaussian with covariance I + R, and their reduction for a shifted Gaussian
via the binomial identity on H_j(x + w).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

MAX_DEGREE = 24


def _check_degree(j: int) -> None:
    if j < 0:
        raise ValueError(f"degree must be non-negative, got {j}")
    if j > MAX_DEGREE:
        raise ValueError(f"degree capped at {MAX_DEGREE}, got {j}")


def hermite_eval(j: int, x):
    """H_j(x) by the three-term recurrence; x may be a scalar or an array."""
    _check_degree(j)
    arr = np.asarray(x, dtype=float)
    if j == 0:
        out = np.ones_like(arr)
        return float(out) if arr.ndim == 0 else out
    prev = np.ones_like(arr)
    cur = arr.copy()
    for deg in range(1, j):
        prev, cur = cur, arr * cur - deg * prev
    return float(cur) if arr.ndim == 0 else cur


def hermite_table(max_degree: int, x: np.ndarray) -> np.ndarray:
    """Stack H_0(x) .. H_max(x) along a new leading axis, one recurrence pass."""
    _check_degree(max_degree)
    x = np.asarray(x, dtype=float)
    out = np.empty((max_degree + 1,) + x.shape)
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = x
    for deg in range(1, max_degree):
        out[deg + 1] = x * out[deg] - deg * out[deg - 1]
    return out


@dataclass(frozen=True)
class HermiteCoeffs:
    """Exact monomial coefficients of H_degree, index = power of x."""

    degree: int
    coeffs: tuple[Fraction, ...]

    def __post_init__(self):
        assert len(self.coeffs) == self.degree + 1
        assert self.coeffs[-1] == 1

    def eval(self, x: float) -> float:
        acc = 0.0
        for c in reversed(self.coeffs):
            acc = acc * x + float(c)
        return acc

    def derivative_coeffs(self) -> tuple[Fraction, ...]:
        """Exact coefficients of H_degree', for the identity H_{n+1}' = (n+1) H_n."""
        if self.degree == 0:
            return (Fraction(0),)
        return tuple(c * p for p, c in enumerate(self.coeffs))[1:]


def hermite_coeffs(j: int) -> HermiteCoeffs:
    """Exact coefficients from the explicit factorial formula.

    The coefficient of x^(j - 2m) is j! (-1)^m / (m! (j - 2m)! 2^m); entries
    of opposite parity are zero and the leading coefficient is one.
    """
    _check_degree(j)
    coeffs = [Fraction(0)] * (j + 1)
    for m in range(j // 2 + 1):
        power = j - 2 * m
        coeffs[power] = Fraction(
            math.factorial(j) * (-1) ** m,
            math.factorial(m) * math.factorial(power) * 2**m,
        )
    return HermiteCoeffs(j, tuple(coeffs))


def _pair_sum_over_matchings(labels: list[int], R: np.ndarray) -> float:
    """Sum over perfect matchings of `labels` of the product of R entries.

    Recursion pairs the first remaining label with each later one; there are
    (v-1)!! matchings for v labels, which is the deduplicated form of the
    arrangement sum (the (v/2)! 2^(v/2) symmetry factor cancels the lemma's
    prefactor exactly).
    """
    if not labels:
        return 1.0
    first, rest = labels[0], labels[1:]
    total = 0.0
    for i, partner in enumerate(rest):
        sub = rest[:i] + rest[i + 1 :]
        total += R[first, partner] * _pair_sum_over_matchings(sub, R)
    return total


def hermite_product_moment_centered(s, R) -> float:
    """E[H_s1(Z1) ... H_sd(Zd)] for Z centered Gaussian with covariance I + R.

    Zero whenever the total degree is odd. R may have nonzero diagonal; a
    label may be matched with another copy of itself, contributing R_aa.
    """
    s = tuple(int(v) for v in s)
    if any(v < 0 for v in s):
        raise ValueError(f"multi-index entries must be non-negative, got {s}")
    R = np.asarray(R, dtype=float)
    if R.shape != (len(s), len(s)):
        raise ValueError(f"covariance shift shape {R.shape} does not match {len(s)} slots")
    v = sum(s)
    if v % 2 == 1:
        return 0.0
    labels = [slot for slot, count in enumerate(s) for _ in range(count)]
    return _pair_sum_over_matchings(labels, R)


def hermite_product_moment_shifted(J, shifted_mean, R) -> float:
    """E[prod_i H_{J_i}(G_i)] for G Gaussian with mean `shifted_mean`, cov I + R.

    Binomial reduction: H_j(x + w) = sum_r C(j, r) w^r H_{j-r}(x), so the
    shifted moment is a weighted sum of centered moments over all residual
    degree vectors. The inner sums run from r = 0; odd-total residuals vanish
    inside the centered routine.
    """
    J = tuple(int(v) for v in J)
    if any(v < 0 for v in J):
        raise ValueError(f"multi-index entries must be non-negative, got {J}")
    w = np.asarray(shifted_mean, dtype=float)
    if w.shape != (len(J),):
        raise ValueError("shifted mean length does not match multi-index")
    total = 0.0
    for rs in product(*[range(j + 1) for j in J]):
        weight = 1.0
        for j, r, wi in zip(J, rs, w):
            weight *= math.comb(j, r) * wi**r
        if weight == 0.0:
            continue
        residual = tuple(j - r for j, r in zip(J, rs))
        total += weight * hermite_product_moment_centered(residual, R)
    return total
