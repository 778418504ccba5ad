"""SPD matrix algebra, Gaussian densities, and Gauss-Hermite quadrature.

Everything here is generic linear-Gaussian plumbing: symmetric square roots
via eigendecomposition (the expansion needs the symmetric root, and the
minimum eigenvalue feeds the bound diagnostics), multivariate normal density
evaluation, and tensorized Gauss-Hermite rules for bivariate expectations of
activation products.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SPD_TOLERANCE = 1e-10
SYMMETRY_TOLERANCE = 1e-12


class NotPositiveDefinite(Exception):
    """Raised when a matrix required to be SPD fails the eigenvalue check."""


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """A validated symmetric positive definite matrix with cached spectrum.

    Build through `from_array`. Construction fails loudly below the
    eigenvalue tolerance instead of regularizing: downstream formulas assume
    genuine invertibility and a silent ridge would corrupt the whitened
    deviation matrices.
    """

    entries: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @classmethod
    def from_array(cls, M) -> "SpdMatrix":
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {M.shape}")
        scale = max(1.0, float(np.max(np.abs(M))))
        asym = float(np.max(np.abs(M - M.T)))
        if asym > SYMMETRY_TOLERANCE * scale:
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
        sym = 0.5 * (M + M.T)
        vals, vecs = np.linalg.eigh(sym)
        if vals[0] <= SPD_TOLERANCE * scale:
            raise NotPositiveDefinite(
                f"minimum eigenvalue {vals[0]:.3e} at or below tolerance"
            )
        sym = sym.copy()
        sym.setflags(write=False)
        vals.setflags(write=False)
        vecs.setflags(write=False)
        return cls(sym, vals, vecs)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def det(self) -> float:
        return float(np.prod(self.eigenvalues))

    def _map_spectrum(self, fn) -> "SpdMatrix":
        vals = fn(self.eigenvalues)
        out = (self.eigenvectors * vals) @ self.eigenvectors.T
        return SpdMatrix.from_array(out)

    def sqrt(self) -> "SpdMatrix":
        return self._map_spectrum(np.sqrt)

    def sqrt_inv(self) -> "SpdMatrix":
        return self._map_spectrum(lambda v: 1.0 / np.sqrt(v))

    def inv(self) -> "SpdMatrix":
        return self._map_spectrum(lambda v: 1.0 / v)

    def __array__(self, dtype=None):
        return np.asarray(self.entries, dtype=dtype)


def spd_sqrt(M) -> SpdMatrix:
    """Symmetric square root; result squared reproduces M to 1e-10 relative."""
    return as_spd(M).sqrt()


def as_spd(M) -> SpdMatrix:
    return M if isinstance(M, SpdMatrix) else SpdMatrix.from_array(M)


def gaussian_density(Sigma, x):
    """Centered multivariate normal density at x (a d-vector or (N, d) array)."""
    S = as_spd(Sigma)
    pts = np.asarray(x, dtype=float)
    squeeze = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != S.dim:
        raise ValueError(f"points have dimension {pts.shape[1]}, matrix is {S.dim}x{S.dim}")
    white = pts @ (S.eigenvectors / np.sqrt(S.eigenvalues))
    quad = np.sum(white * white, axis=1)
    norm = (2.0 * np.pi) ** (-S.dim / 2.0) / np.sqrt(S.det)
    out = norm * np.exp(-0.5 * quad)
    return float(out[0]) if squeeze else out


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Hermite nodes and weights against the standard normal density.

    Weights are normalized so they sum to one; integration of monomials x^j
    is exact for j < 2 * order.
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @classmethod
    def gauss_hermite(cls, order: int = 40) -> "QuadratureRule":
        return _gauss_hermite_cached(order)


@lru_cache(maxsize=16)
def _gauss_hermite_cached(order: int) -> QuadratureRule:
    if order < 1:
        raise ValueError("quadrature order must be positive")
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / np.sqrt(2.0 * np.pi)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, order)


DEGENERATE_CORR_TOLERANCE = 1e-10


def bivariate_gaussian_expectation(f, cov, rule: QuadratureRule) -> float:
    """E[f(U, V)] for (U, V) centered Gaussian with the given 2x2 covariance.

    Tensor Gauss-Hermite after a Cholesky transform; deterministic. When the
    correlation is +-1 within tolerance the rank-one case is integrated with
    a single 1-D rule along the degenerate direction. `f` must accept numpy
    arrays elementwise.
    """
    C = np.asarray(cov, dtype=float) if not isinstance(cov, SpdMatrix) else cov.entries
    if C.shape != (2, 2):
        raise ValueError(f"expected 2x2 covariance, got shape {C.shape}")
    s11, s22, s12 = C[0, 0], C[1, 1], C[0, 1]
    if s11 <= 0.0 or s22 <= 0.0:
        raise NotPositiveDefinite("nonpositive variance in bivariate expectation")
    corr = s12 / np.sqrt(s11 * s22)
    if abs(corr) >= 1.0 - DEGENERATE_CORR_TOLERANCE:
        u = np.sqrt(s11) * rule.nodes
        v = np.sign(corr) * np.sqrt(s22) * rule.nodes
        return float(np.sum(rule.weights * f(u, v)))
    spd = as_spd(C)
    L = np.linalg.cholesky(spd.entries)
    zu, zv = np.meshgrid(rule.nodes, rule.nodes, indexing="ij")
    u = L[0, 0] * zu
    v = L[1, 0] * zu + L[1, 1] * zv
    w = np.outer(rule.weights, rule.weights)
    return float(np.sum(w * f(u, v)))
