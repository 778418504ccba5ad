"""Posterior and predictive laws under the expansion prior.

Everything here is the unit-noise Gaussian-likelihood case with a single
output copy. The reweighted prior has a closed form: a Gaussian factor with
precision K^-1 + I centered at the ridge-regression mean, carrying the
prior's own Hermite correction polynomial, normalized by an explicitly
computable constant. A quadrature path and the closed form coexist and are
cross-checked in the tests; the predictive distribution is estimated by
self-normalized importance sampling with the prior as proposal.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .edgeworth import EdgeworthModel, edgeworth_density_grid
from .gausslin import SpdMatrix, as_spd
from .hermite import hermite_product_moment_shifted, hermite_table
from .metrics import (
    GridSpec,
    TvScanRow,
    edgeworth_upper_bound,
    negative_mass_fraction,
    true_density_grid,
    tv_on_grid,
)
from .multiindex import enumerate_A, enumerate_S
from .network import (
    InputSet,
    MomentTensor,
    NetworkConfig,
    _forward_batch,
    deviation_moments,
    is_shallow_example,
    limit_kernel,
    moment_tensor,
    shallow_relu_moment_tensor,
    shallow_relu_moments,
)
from .streams import ChunkedStream

log = logging.getLogger(__name__)

NORMALIZER_FLOOR = 1e-10


class DegenerateNormalizer(Exception):
    """Raised when a posterior normalizing integral is numerically zero."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Training inputs with scalar labels, one label per input."""

    inputs: InputSet
    labels: np.ndarray

    @classmethod
    def from_pairs(cls, rows, labels) -> "Dataset":
        inputs = rows if isinstance(rows, InputSet) else InputSet.from_rows(rows)
        y = np.asarray(labels, dtype=float).reshape(-1)
        if len(y) != inputs.count:
            raise ValueError(f"{inputs.count} inputs but {len(y)} labels")
        y = y.copy()
        y.setflags(write=False)
        return cls(inputs, y)

    @property
    def size(self) -> int:
        return self.inputs.count


class GaussianLikelihood:
    """L(z) = exp(-0.5 sum_i (z_i - y_i)^2), unit observation noise."""

    def __init__(self, labels):
        self.labels = np.asarray(labels, dtype=float).reshape(-1)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        diff = z - self.labels
        return np.exp(-0.5 * np.sum(diff * diff, axis=-1))


def posterior_curve(
    model: EdgeworthModel, likelihood, grid: GridSpec
) -> tuple[np.ndarray, float]:
    """Likelihood-reweighted prior on the grid and its quadrature normalizer."""
    if grid.dim != model.total_dim:
        raise ValueError("grid dimension does not match the model")
    pts = grid.points()
    weighted = likelihood(pts) * edgeworth_density_grid(model, pts)
    normalizer = float(np.sum(weighted)) * grid.cell_volume
    if abs(normalizer) < NORMALIZER_FLOOR:
        raise DegenerateNormalizer(
            f"likelihood mass {normalizer:.3e} under the prior is numerically zero"
        )
    return weighted / normalizer, normalizer


def posterior_density_edgeworth(
    model: EdgeworthModel, likelihood, x, grid: GridSpec
) -> float:
    """L(x) gamma(x) / integral(L dgamma), denominator by grid quadrature."""
    if model.total_dim > 3:
        raise ValueError("the quadrature path supports dimension <= 3")
    pts = grid.points()
    weighted = likelihood(pts) * edgeworth_density_grid(model, pts)
    normalizer = float(np.sum(weighted)) * grid.cell_volume
    if abs(normalizer) < NORMALIZER_FLOOR:
        raise DegenerateNormalizer(
            f"likelihood mass {normalizer:.3e} under the prior is numerically zero"
        )
    point = np.asarray(x, dtype=float).reshape(1, -1)
    value = likelihood(point)[0] * float(edgeworth_density_grid(model, point)[0])
    return value / normalizer


def _correction_sum(moments: MomentTensor, d: int, k_max: int) -> dict[tuple[int, ...], float]:
    """Arrangement-summed moment weights per composition J, scaled by 1/(k! 2^k)."""
    weights: dict[tuple[int, ...], float] = {}
    for k in range(1, k_max + 1):
        scale = 1.0 / (math.factorial(k) * 2**k)
        for J in enumerate_S(d, k):
            total = 0.0
            for alpha in enumerate_A(J):
                pairs = tuple(
                    (alpha[r], alpha[r + 1]) for r in range(0, len(alpha), 2)
                )
                total += moments.get(pairs).estimate
            if total != 0.0:
                weights[J] = weights.get(J, 0.0) + scale * total
    return weights


def normalizing_constant(
    kernel: SpdMatrix,
    dataset: Dataset,
    moments: MomentTensor,
    m: int,
    apply_parity_indicator: bool = True,
) -> float:
    """The closed-form posterior normalizer.

    Gaussian prefactor (2 pi)^(-d/2) det(K^-1 + I)^(-1/2) times one plus the
    moment-weighted shifted Hermite expectations taken under the conjugate
    Gaussian factor, whose whitened shift is sqrt(K)^-1 mu and whose
    covariance shift is R = (I + K)^-1 - I.

    The parity indicator restricts the shifted reduction to even residual
    totals. Odd totals vanish identically, so disabling the indicator gives
    bit-identical results; the flag exists so tests can assert that
    redundancy rather than assume it.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    kernel = as_spd(kernel)
    d = dataset.size
    if kernel.dim != d:
        raise ValueError("kernel dimension does not match the dataset")
    k_inv = kernel.inv().entries
    precision = as_spd(k_inv + np.eye(d))
    mu = precision.inv().entries @ dataset.labels
    w = kernel.sqrt_inv().entries @ mu
    R = np.linalg.inv(np.eye(d) + kernel.entries) - np.eye(d)
    shifted = (
        _shifted_moment_even_only if apply_parity_indicator else hermite_product_moment_shifted
    )
    series = 0.0
    for J, weight in sorted(_correction_sum(moments, d, 2 * m - 1).items()):
        series += weight * shifted(J, w, R)
    prefactor = (2.0 * math.pi) ** (-d / 2.0) / math.sqrt(precision.det)
    return prefactor * (1.0 + series)


def _shifted_moment_even_only(J, shifted_mean, R) -> float:
    """Shifted reduction with the explicit even-total indicator kept in."""
    from itertools import product as iproduct

    from .hermite import hermite_product_moment_centered

    J = tuple(int(v) for v in J)
    w = np.asarray(shifted_mean, dtype=float)
    total = 0.0
    for rs in iproduct(*[range(j + 1) for j in J]):
        if sum(rs) % 2 != 0:
            continue
        weight = 1.0
        for j, r, wi in zip(J, rs, w):
            weight *= math.comb(j, r) * wi**r
        if weight == 0.0:
            continue
        residual = tuple(j - r for j, r in zip(J, rs))
        total += weight * hermite_product_moment_centered(residual, R)
    return total


@dataclass(frozen=True, eq=False)
class PosteriorClosedForm:
    """The assembled closed-form posterior density.

    The Gaussian factor carries precision K^-1 + I (a precision, not a
    covariance) around the conjugate mean; the correction polynomial is the
    prior's, evaluated in prior-whitened coordinates; the normalizer makes
    the signed density integrate to one.
    """

    kernel: SpdMatrix
    mean: np.ndarray
    precision: SpdMatrix
    correction_coefficients: dict[tuple[int, ...], float]
    normalizer: float

    @cached_property
    def _sqrt_inv(self) -> np.ndarray:
        return self.kernel.sqrt_inv().entries

    @cached_property
    def _max_degree(self) -> int:
        if not self.correction_coefficients:
            return 0
        return max(max(J) for J in self.correction_coefficients)

    def density(self, x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        squeeze = np.asarray(x).ndim == 1
        d = self.kernel.dim
        if pts.shape[1] != d:
            raise ValueError(f"points have dimension {pts.shape[1]}, expected {d}")
        u = pts @ self._sqrt_inv.T
        H = hermite_table(self._max_degree, u)
        corr = np.zeros(len(pts))
        for J, coeff in sorted(self.correction_coefficients.items()):
            term = np.full(len(pts), coeff)
            for slot, degree in enumerate(J):
                if degree:
                    term = term * H[degree, :, slot]
            corr += term
        centered = pts - self.mean
        white = centered @ (self.precision.eigenvectors * np.sqrt(self.precision.eigenvalues))
        quad = np.sum(white * white, axis=1)
        denom = (2.0 * math.pi) ** d * self.normalizer
        out = (1.0 + corr) * np.exp(-0.5 * quad) / denom
        return float(out[0]) if squeeze else out


def posterior_closed_form(
    kernel: SpdMatrix, dataset: Dataset, moments: MomentTensor, m: int
) -> PosteriorClosedForm:
    """Assemble mean, Gaussian-factor precision, corrections, and normalizer."""
    kernel = as_spd(kernel)
    d = dataset.size
    k_inv = kernel.inv().entries
    precision = as_spd(k_inv + np.eye(d))
    mean = precision.inv().entries @ dataset.labels
    coeffs = EdgeworthModel(kernel, moments, 1, 2 * m - 1).coefficient_table
    normalizer = normalizing_constant(kernel, dataset, moments, m)
    if abs(normalizer) < NORMALIZER_FLOOR:
        raise DegenerateNormalizer(f"closed-form normalizer {normalizer:.3e} vanishes")
    return PosteriorClosedForm(kernel, mean, precision, dict(coeffs), normalizer)


@dataclass(frozen=True, eq=False)
class PredictiveResult:
    """Binned predictive probabilities from self-normalized importance sampling."""

    edges: np.ndarray
    probs: np.ndarray
    stderrs: np.ndarray
    ess: float
    samples: int

    def rows(self):
        for i in range(len(self.probs)):
            yield (
                float(self.edges[i]),
                float(self.edges[i + 1]),
                float(self.probs[i]),
                float(self.stderrs[i]),
            )


def predictive_distribution(
    config: NetworkConfig,
    dataset: Dataset,
    x_star,
    bins,
    samples: int,
    stream: ChunkedStream,
) -> PredictiveResult:
    """Posterior predictive mass per bin at a new input.

    Joint prior samples at the training inputs and x_star serve as the
    proposal; each network's likelihood at the training outputs is its
    importance weight. Bin probabilities are weight ratios with delta-method
    standard errors. Aborts when the weight sum is dominated by its own
    noise (denominator below four standard errors).
    """
    if samples < 10_000:
        raise ValueError("the predictive estimate needs at least 10^4 samples")
    if config.output_copies != 1:
        raise ValueError("predictive path covers a single output copy")
    edges = np.asarray(bins, dtype=float).reshape(-1)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0.0):
        raise ValueError("bins must be a strictly increasing edge sequence")
    star = np.asarray(x_star, dtype=float).reshape(1, -1)
    joint = InputSet.from_rows(np.vstack([dataset.inputs.points, star]))
    likelihood = GaussianLikelihood(dataset.labels)
    d = dataset.size
    nbins = len(edges) - 1

    sum_w = 0.0
    sum_w2 = 0.0
    bin_w = np.zeros(nbins)
    bin_w2 = np.zeros(nbins)
    for _, count, gen in stream.chunks(samples):
        out, _ = _forward_batch(config, joint, gen, count)
        z = out[:, 0, :]
        weights = likelihood(z[:, :d])
        z_star = z[:, d]
        sum_w += float(weights.sum())
        sum_w2 += float((weights * weights).sum())
        slot = np.searchsorted(edges, z_star, side="right") - 1
        inside = (slot >= 0) & (slot < nbins) & (z_star < edges[-1])
        np.add.at(bin_w, slot[inside], weights[inside])
        np.add.at(bin_w2, slot[inside], (weights * weights)[inside])

    denom_var = max(0.0, sum_w2 - sum_w * sum_w / samples)
    # <= so a fully underflowed weight sum (0 with zero variance) still aborts.
    if sum_w <= 4.0 * math.sqrt(denom_var):
        raise DegenerateNormalizer(
            f"importance-weight sum {sum_w:.3e} is below four standard errors"
        )
    probs = bin_w / sum_w
    var = bin_w2 - 2.0 * probs * bin_w2 + probs * probs * sum_w2
    stderrs = np.sqrt(np.maximum(0.0, var)) / sum_w
    ess = sum_w * sum_w / sum_w2 if sum_w2 > 0 else 0.0
    return PredictiveResult(edges, probs, stderrs, ess, samples)


def posterior_tv_scan(
    config: NetworkConfig,
    dataset: Dataset,
    widths,
    ms,
    samples: int,
    grid: GridSpec,
    master_seed: int,
    moment_samples: int | None = None,
    threads: int = 1,
) -> list[TvScanRow]:
    """TV between the true posterior and the closed-form expansion posterior.

    Scalar-dataset grid path. The true posterior is the Monte-Carlo output
    density reweighted by the likelihood and renormalized on the grid; the
    expansion posterior is the closed form at order m. The lower-bound
    column is 0 (the prior lower bound does not transfer); the upper-bound
    column carries the prior upper bound divided by the estimated likelihood
    mass, the quantity the proof strategy controls. Each row logs the
    negative-mass fraction of the signed posterior.
    """
    if dataset.size != 1 or grid.dim != 1:
        raise ValueError("the posterior scan is a scalar-dataset grid path")
    shallow = is_shallow_example(config, dataset.inputs)
    if moment_samples is None:
        moment_samples = max(samples, 100_000)
    pts = grid.points()
    likelihood = GaussianLikelihood(dataset.labels)
    like_vals = likelihood(pts)
    cell = grid.cell_volume
    rows: list[TvScanRow] = []
    for width in widths:
        cfg = config.with_hidden_width(width)
        kernel = limit_kernel(cfg, dataset.inputs).output
        grid.check_coverage([math.sqrt(kernel.entries[0, 0])])
        if shallow:
            moments = shallow_relu_moment_tensor(width, 4)
            exact_cm = {j: float(shallow_relu_moments(width, j)) for j in range(1, 5)}
        else:
            moments = moment_tensor(
                cfg,
                dataset.inputs,
                max(2 * m - 1 for m in ms),
                moment_samples,
                ChunkedStream(master_seed, "moment-mc", key=(width,)),
                threads=threads,
            )
            exact_cm = None
        truth = true_density_grid(
            cfg,
            dataset.inputs,
            pts,
            samples,
            ChunkedStream(master_seed, "density-mc", key=(width,)),
            exact_central_moments=exact_cm,
            kernel=kernel,
            threads=threads,
        )
        like_mass = float(np.sum(like_vals * truth.estimate)) * cell
        if abs(like_mass) < NORMALIZER_FLOOR:
            raise DegenerateNormalizer("likelihood mass under the true law vanishes")
        post_true = like_vals * truth.estimate / like_mass
        halves = []
        for half in (truth.half_a, truth.half_b):
            mass = float(np.sum(like_vals * half)) * cell
            halves.append(like_vals * half / mass)
        for m in ms:
            closed = posterior_closed_form(kernel, dataset, moments, m)
            post_edge = closed.density(pts)
            report = tv_on_grid(post_true, post_edge, grid, (halves[0], halves[1]))
            dev = deviation_moments(
                cfg,
                dataset.inputs,
                m,
                moment_samples,
                ChunkedStream(master_seed, "moment-mc", key=(width, 1)),
                threads=threads,
            )
            op_2m = (
                float(shallow_relu_moments(width, 2 * m))
                if shallow and 2 * m <= 4
                else dev.op_2m
            )
            prior_upper = edgeworth_upper_bound(
                op_2m, dev.op_4m, kernel.min_eigenvalue, 1, 1, m
            )
            neg = negative_mass_fraction(post_edge, grid)
            log.info(
                "posterior scan width=%d m=%d tv=%.3e likelihood_mass=%.3e "
                "negative_mass=%.3e",
                width,
                m,
                report.tv,
                like_mass,
                neg,
            )
            rows.append(
                TvScanRow(
                    width,
                    m,
                    report.tv,
                    report.tail_bound,
                    report.mc_noise,
                    0.0,
                    prior_upper / like_mass,
                    master_seed,
                )
            )
    return rows
