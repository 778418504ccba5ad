"""Distance diagnostics: true-density estimation, grid TV, and the bounds.

The true density of the conditionally Gaussian output is a mixture of block
Gaussians over the random conditional covariance; it has no closed form, so
it is estimated by Monte Carlo on a grid. Total variation against the
expansion curves is then a cell sum, with the truncation deficit and the MC
noise surfaced separately so acceptance tests can budget them explicitly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .edgeworth import EdgeworthModel, edgeworth_density_grid
from .gausslin import QuadratureRule, SpdMatrix
from .hermite import hermite_table
from .network import (
    InputSet,
    NetworkConfig,
    _cond_cov_batch,
    deviation_moments,
    is_shallow_example,
    limit_kernel,
    moment_tensor,
    shallow_relu_moment_tensor,
    shallow_relu_moments,
)
from .streams import ChunkedStream

PSD_SKIP_TOLERANCE = 1e-12
MAX_SKIP_FRACTION = 0.01


@dataclass(frozen=True)
class GridSpec:
    """Uniform rectangular evaluation grid, axes as (lo, hi, count) triples."""

    axes: tuple[tuple[float, float, int], ...]

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 3:
            raise ValueError("grids support 1 to 3 axes")
        for lo, hi, count in self.axes:
            if hi <= lo:
                raise ValueError(f"empty axis range [{lo}, {hi}]")
            if count < 33:
                raise ValueError(f"need at least 33 points per axis, got {count}")

    @classmethod
    def uniform(cls, lo: float, hi: float, count: int, dim: int = 1) -> "GridSpec":
        return cls(tuple((lo, hi, count) for _ in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def cell_volume(self) -> float:
        vol = 1.0
        for lo, hi, count in self.axes:
            vol *= (hi - lo) / (count - 1)
        return vol

    def axis_points(self, i: int) -> np.ndarray:
        lo, hi, count = self.axes[i]
        return np.linspace(lo, hi, count)

    def points(self) -> np.ndarray:
        """All grid points, first axis slowest (lexicographic order)."""
        mesh = np.meshgrid(*[self.axis_points(i) for i in range(self.dim)], indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def check_coverage(self, marginal_stds: Sequence[float], factor: float = 6.0) -> None:
        for (lo, hi, _), std in zip(self.axes, marginal_stds):
            if lo > -factor * std or hi < factor * std:
                raise ValueError(
                    f"axis [{lo}, {hi}] covers less than {factor} standard "
                    f"deviations (std {std:.4g})"
                )


@dataclass(frozen=True, eq=False)
class TrueDensityGrid:
    """Monte-Carlo density estimates on a grid with half-sample splits."""

    estimate: np.ndarray
    stderr: np.ndarray
    half_a: np.ndarray
    half_b: np.ndarray
    samples_used: int
    skipped_fraction: float


def _taylor_coefficients(pts: np.ndarray, kernel_value: float, orders: Sequence[int]) -> np.ndarray:
    """Control-variate shape functions H_{2j}(x/sqrt(K)) phi_K(x) / (j! (2K)^j).

    These are the exact derivative terms of the variance-interpolated
    Gaussian, so subtracting them against known central moments of A leaves
    the estimator unbiased while cancelling most of the chunk noise.
    """
    x = pts[:, 0]
    u = x / math.sqrt(kernel_value)
    phi = np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi * kernel_value)
    H = hermite_table(2 * max(orders), u)
    out = np.empty((len(orders), len(x)))
    for row, j in enumerate(orders):
        out[row] = H[2 * j] * phi / (math.factorial(j) * (2.0 * kernel_value) ** j)
    return out


def true_density_grid(
    config: NetworkConfig,
    inputs: InputSet,
    pts: np.ndarray,
    samples: int,
    stream: ChunkedStream,
    exact_central_moments: dict[int, float] | None = None,
    kernel: SpdMatrix | None = None,
    rule: QuadratureRule | None = None,
    threads: int = 1,
) -> TrueDensityGrid:
    """Estimate E_A[prod_blocks phi_A(x_block)] at each grid point.

    Draws failing the PSD check are skipped and counted; more than 1% skips
    aborts the run. When `exact_central_moments` maps j to E[(A - K)^j]
    (scalar-output case only), the matching empirical powers are subtracted
    as control variates, which keeps the estimator unbiased and shrinks its
    noise by several orders of magnitude.
    """
    if samples < 1000:
        raise ValueError("density estimation needs at least 1000 samples")
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    d = inputs.count
    n = config.output_copies
    nd = n * d
    if pts.shape[1] != nd:
        raise ValueError(f"points have dimension {pts.shape[1]}, expected {nd}")
    blocks = pts.reshape(len(pts), n, d)
    norm_exp = (2.0 * math.pi) ** (-nd / 2.0)

    cv_orders: list[int] = []
    cv_funcs = None
    cv_exact = None
    k_value = None
    if exact_central_moments:
        if nd != 1:
            raise ValueError("control variates are implemented for scalar outputs only")
        if kernel is None:
            kernel = limit_kernel(config, inputs, rule).output
        k_value = float(kernel.entries[0, 0])
        cv_orders = sorted(exact_central_moments)
        cv_funcs = _taylor_coefficients(pts, k_value, cv_orders)
        cv_exact = np.array([exact_central_moments[j] for j in cv_orders])

    def work(args):
        index, count, gen = args
        A = _cond_cov_batch(config, inputs, gen, count)
        if d == 1:
            scale = max(1.0, float(np.max(np.abs(A))))
            mask = A[:, 0, 0] > PSD_SKIP_TOLERANCE * scale
            A = A[mask]
            dets = A[:, 0, 0]
            inv = 1.0 / A
        else:
            vals = np.linalg.eigvalsh(A)
            scale = max(1.0, float(np.max(np.abs(A))))
            mask = vals[:, 0] > PSD_SKIP_TOLERANCE * scale
            A = A[mask]
            dets = np.prod(vals[mask], axis=1)
            inv = np.linalg.inv(A)
        used = int(A.shape[0])
        skipped = count - used
        quad = np.einsum("Nnd,cde,Nne->cN", blocks, inv, blocks)
        g = norm_exp * dets[:, None] ** (-n / 2.0) * np.exp(-0.5 * quad)
        if cv_funcs is not None:
            delta = A[:, 0, 0] - k_value
            for row, j in enumerate(cv_orders):
                g = g - np.outer(delta**j - cv_exact[row], cv_funcs[row])
        return index, g.sum(axis=0), (g * g).sum(axis=0), used, skipped

    chunks = list(stream.chunks(samples))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(work, chunks))
    else:
        partials = [work(c) for c in chunks]

    total = np.zeros(pts.shape[0])
    total_sq = np.zeros(pts.shape[0])
    halves = [np.zeros(pts.shape[0]), np.zeros(pts.shape[0])]
    half_counts = [0, 0]
    used_total = 0
    skipped_total = 0
    for index, sums, sumsqs, used, skipped in partials:
        total += sums
        total_sq += sumsqs
        halves[index % 2] += sums
        half_counts[index % 2] += used
        used_total += used
        skipped_total += skipped
    if used_total == 0:
        raise RuntimeError("every conditional covariance draw failed the PSD check")
    skipped_fraction = skipped_total / samples
    if skipped_fraction > MAX_SKIP_FRACTION:
        raise RuntimeError(
            f"{skipped_fraction:.2%} of covariance draws failed the PSD check"
        )
    est = total / used_total
    var = np.maximum(0.0, total_sq / used_total - est * est)
    stderr = np.sqrt(var / used_total)
    half_a = halves[0] / max(half_counts[0], 1)
    half_b = halves[1] / max(half_counts[1], 1)
    return TrueDensityGrid(est, stderr, half_a, half_b, used_total, skipped_fraction)


def true_density(
    config: NetworkConfig,
    inputs: InputSet,
    x,
    samples: int,
    stream: ChunkedStream,
    **kwargs,
) -> tuple[float, float]:
    """Point estimate and standard error of the true output density at x."""
    point = np.asarray(x, dtype=float).reshape(1, -1)
    res = true_density_grid(config, inputs, point, samples, stream, **kwargs)
    return float(res.estimate[0]), float(res.stderr[0])


@dataclass(frozen=True)
class TvReport:
    """Grid TV with its truncation and Monte-Carlo noise budget."""

    tv: float
    tail_bound: float
    mc_noise: float


def _grid_tv(a: np.ndarray, b: np.ndarray, cell: float) -> float:
    return 0.5 * float(np.sum(np.abs(a - b))) * cell


def tv_on_grid(
    density_a: np.ndarray,
    density_b: np.ndarray,
    grid: GridSpec,
    halves_a: tuple[np.ndarray, np.ndarray] | None = None,
) -> TvReport:
    """Half the cell-weighted L1 distance between two grid evaluations.

    The tail bound is the halved sum of both curves' absolute mass deficits
    on the truncation box. When half-sample estimates of the first curve are
    supplied, the TV inflation caused by their noise is estimated from the
    half-versus-full gap (half samples carry sqrt(2) times the bias) and
    reported, clamped at zero.
    """
    a = np.asarray(density_a, dtype=float)
    b = np.asarray(density_b, dtype=float)
    expected = math.prod(count for _, _, count in grid.axes)
    if a.shape != (expected,) or b.shape != (expected,):
        raise ValueError("density arrays do not match the grid")
    cell = grid.cell_volume
    tv = _grid_tv(a, b, cell)
    deficit_a = abs(1.0 - float(np.sum(a)) * cell)
    deficit_b = abs(1.0 - float(np.sum(b)) * cell)
    tail = 0.5 * (deficit_a + deficit_b)
    noise = 0.0
    if halves_a is not None:
        t_half = 0.5 * (_grid_tv(halves_a[0], b, cell) + _grid_tv(halves_a[1], b, cell))
        noise = max(0.0, (t_half - tv) / (math.sqrt(2.0) - 1.0))
    return TvReport(tv, tail, noise)


def negative_mass_fraction(density: np.ndarray, grid: GridSpec) -> float:
    """|negative part| / total |mass| of a signed grid density."""
    d = np.asarray(density, dtype=float)
    total = float(np.sum(np.abs(d)))
    if total == 0.0:
        return 0.0
    return float(np.sum(np.abs(d[d < 0.0]))) / total


@dataclass(frozen=True)
class CosProbeResult:
    lhs: float
    lhs_stderr: float
    rhs_gaussian: float
    rhs_edgeworth: float


def cos_probe(
    config: NetworkConfig,
    inputs: InputSet,
    coord: int,
    samples: int,
    stream: ChunkedStream,
    m: int = 2,
    rule: QuadratureRule | None = None,
) -> CosProbeResult:
    """The cosine test function evaluated three ways.

    lhs is the Monte-Carlo mean of exp(-A_jj / 2), which equals the integral
    of cos(x_j) against the true law; the Gaussian reference replaces A by K;
    the expansion reference appends the alternating central-moment series
    through order 2m - 1.
    """
    if coord < 1 or coord > inputs.count:
        raise ValueError(f"coordinate {coord} outside 1..{inputs.count}")
    kernel = limit_kernel(config, inputs, rule).output
    k_jj = float(kernel.entries[coord - 1, coord - 1])
    powers = list(range(2, 2 * m))
    acc = np.zeros(2 + len(powers))
    total = 0
    for _, count, gen in stream.chunks(samples):
        A = _cond_cov_batch(config, inputs, gen, count)
        a_jj = A[:, coord - 1, coord - 1]
        e = np.exp(-0.5 * a_jj)
        row = [e.sum(), (e * e).sum()]
        row.extend(((a_jj - k_jj) ** k).sum() for k in powers)
        acc += np.array(row)
        total += count
    lhs = acc[0] / total
    lhs_se = math.sqrt(max(0.0, acc[1] / total - lhs * lhs) / total)
    central = {k: acc[2 + i] / total for i, k in enumerate(powers)}
    series = sum(
        (-1.0) ** k / (2.0**k * math.factorial(k)) * central[k] for k in powers
    )
    base = math.exp(-0.5 * k_jj)
    return CosProbeResult(lhs, lhs_se, base, base * (1.0 + series))


def edgeworth_lower_bound(
    even_moment_2m: float, abs_moment_2m1: float, k_jj: float, m: int
) -> float:
    """The diagonal-coordinate TV lower bound for a mean-matched deviation.

    Valid when E[A] = K. Both moment arguments are central moments of the
    j-th diagonal entry: E[(A_jj - K_jj)^{2m}] and E[|A_jj - K_jj|^{2m+1}].
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    lead = even_moment_2m * math.exp(-0.5 * k_jj) / (2 ** (2 * m) * math.factorial(2 * m))
    slack = abs_moment_2m1 / (2 ** (2 * m + 1) * math.factorial(2 * m))
    return lead - slack


def edgeworth_upper_bound(
    op_moment_2m: float, op_moment_4m: float, lambda_min: float, d: int, n: int, m: int
) -> float:
    """The explicit three-term TV upper bound with estimated norm moments.

    Arguments are E[||A - K||_op^{2m}] and E[||A - K||_op^{4m}]; the result
    is an estimate, not a certificate, because those moments come from
    Monte Carlo.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if lambda_min <= 0.0:
        raise ValueError("minimum eigenvalue must be positive")
    nd = n * d
    lam = lambda_min ** (2 * m)
    term1 = (
        math.factorial(4 * m)
        / (2.0 * math.factorial(2 * m - 1) * lam)
        * math.comb(4 * m + nd - 1, nd - 1)
        * op_moment_2m
    )
    term2 = sum(
        math.comb(2 * k + nd - 1, nd - 1)
        * (math.factorial(2 * k) * 2 ** (2 * m))
        / (2 ** (2 * k + 1) * math.factorial(k) * lam)
        * math.sqrt(op_moment_4m)
        for k in range(1, 2 * m)
    )
    term3 = 2 ** (2 * m) / lam * op_moment_2m
    return term1 + term2 + term3


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float


def fit_rate(widths: Sequence[float], values: Sequence[float]) -> RateFit:
    """Least-squares slope of log(value) against log(width)."""
    w = np.asarray(widths, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(w) < 3:
        raise ValueError("rate fits need at least 3 points")
    if np.any(v <= 0.0) or np.any(w <= 0.0):
        raise ValueError("rate fits need positive widths and values")
    lw, lv = np.log(w), np.log(v)
    slope, intercept = np.polyfit(lw, lv, 1)
    pred = slope * lw + intercept
    ss_res = float(np.sum((lv - pred) ** 2))
    ss_tot = float(np.sum((lv - np.mean(lv)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(float(slope), float(intercept), r2)


@dataclass(frozen=True)
class TvScanRow:
    width: int
    m: int
    tv: float
    tail_bound: float
    mc_noise: float
    lower_bound: float
    upper_bound_estimate: float
    seed: int


def prior_tv_scan(
    config: NetworkConfig,
    inputs: InputSet,
    widths: Sequence[int],
    ms: Sequence[int],
    samples: int,
    grid: GridSpec,
    master_seed: int,
    moment_samples: int | None = None,
    threads: int = 1,
) -> list[TvScanRow]:
    """TV between the true output law and its expansion across widths.

    One true-density estimate per width is shared by all requested orders m
    (each order compares against the expansion truncated at k = 2m - 1).
    For the exact shallow configuration the expansion coefficients and the
    control variates use the rational moment table; otherwise moments are
    estimated from their own substream. Bound columns use the deviation
    moments of the width at hand.
    """
    if grid.dim != inputs.count * config.output_copies:
        raise ValueError("grid dimension does not match the output dimension")
    shallow = is_shallow_example(config, inputs)
    if moment_samples is None:
        moment_samples = max(samples, 100_000)
    pts = grid.points()
    rows: list[TvScanRow] = []
    for width in widths:
        cfg = config.with_hidden_width(width)
        kernel = limit_kernel(cfg, inputs).output
        grid.check_coverage([math.sqrt(kernel.entries[i, i]) for i in range(kernel.dim)])
        k_need = max(2 * m - 1 for m in ms)
        if shallow:
            moments = shallow_relu_moment_tensor(width, max(k_need, 4))
            exact_cm = {j: float(shallow_relu_moments(width, j)) for j in range(1, 5)}
        else:
            moments = moment_tensor(
                cfg,
                inputs,
                k_need,
                moment_samples,
                ChunkedStream(master_seed, "moment-mc", key=(width,)),
                threads=threads,
            )
            exact_cm = None
        truth = true_density_grid(
            cfg,
            inputs,
            pts,
            samples,
            ChunkedStream(master_seed, "density-mc", key=(width,)),
            exact_central_moments=exact_cm,
            kernel=kernel,
            threads=threads,
        )
        for m in ms:
            model = EdgeworthModel(kernel, moments, config.output_copies, 2 * m - 1)
            curve = edgeworth_density_grid(model, pts)
            report = tv_on_grid(truth.estimate, curve, grid, (truth.half_a, truth.half_b))
            if shallow:
                even = float(shallow_relu_moments(width, 2 * m)) if 2 * m <= 4 else None
            else:
                even = None
            dev = deviation_moments(
                cfg,
                inputs,
                m,
                moment_samples,
                ChunkedStream(master_seed, "moment-mc", key=(width, 1)),
                threads=threads,
            )
            even_2m = even if even is not None else dev.even_2m
            op_2m = even_2m if kernel.dim == 1 else dev.op_2m
            lower = edgeworth_lower_bound(
                even_2m, dev.abs_2m1, float(kernel.entries[0, 0]), m
            )
            upper = edgeworth_upper_bound(
                op_2m,
                dev.op_4m,
                kernel.min_eigenvalue,
                kernel.dim,
                config.output_copies,
                m,
            )
            rows.append(
                TvScanRow(
                    width,
                    m,
                    report.tv,
                    report.tail_bound,
                    report.mc_noise,
                    lower,
                    upper,
                    master_seed,
                )
            )
    return rows
