"""Fully connected networks at Gaussian initialization and their kernels.

Covers forward sampling, the realized conditional covariance of the output
layer given the last hidden state, the infinite-width limiting kernel built
by the layer recursion, Monte-Carlo moment tensors of the whitened deviation
Q = sqrt(K)^-1 (A - K) sqrt(K)^-1, and exact rational moments for the
width-n1 shallow ReLU example used as the ground-truth fixture throughout
the test suite.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import combinations, combinations_with_replacement
from typing import Callable, Iterator

import numpy as np

from .gausslin import NotPositiveDefinite, QuadratureRule, SpdMatrix, as_spd
from .streams import ChunkedStream

PairSeq = tuple[tuple[int, int], ...]

_BUILTIN_ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
    "identity": lambda z: z,
}

# Cap on elements of a single weight tensor when vectorizing draws, to keep
# peak memory bounded for wide or deep configurations.
_BATCH_ELEMENT_CAP = 1 << 23


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture and initialization law of a fully connected network.

    `activation` is one of the built-in names or a vectorized univariate
    callable. Callables are assumed polynomially bounded with a piecewise
    continuous derivative; this is not verified at runtime.
    """

    depth: int
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_copies: int = 1
    bias_var: float = 0.0
    weight_var: float = 1.0
    activation: str | Callable[[np.ndarray], np.ndarray] = "relu"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if len(self.hidden_widths) != self.depth:
            raise ValueError(
                f"expected {self.depth} hidden widths, got {len(self.hidden_widths)}"
            )
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if self.output_copies < 1:
            raise ValueError("output_copies must be >= 1")
        if self.bias_var < 0.0:
            raise ValueError("bias_var must be >= 0")
        if self.weight_var <= 0.0:
            raise ValueError("weight_var must be > 0")
        if isinstance(self.activation, str) and self.activation not in _BUILTIN_ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; "
                f"choose from {sorted(_BUILTIN_ACTIVATIONS)} or pass a callable"
            )

    @property
    def activation_fn(self) -> Callable[[np.ndarray], np.ndarray]:
        if callable(self.activation):
            return self.activation
        return _BUILTIN_ACTIVATIONS[self.activation]

    @property
    def is_relu(self) -> bool:
        return self.activation == "relu"

    def with_hidden_width(self, width: int) -> "NetworkConfig":
        return replace(self, hidden_widths=tuple(width for _ in self.hidden_widths))


@dataclass(frozen=True)
class InputSet:
    """Distinct nonzero input points, stacked as rows of a (d, n0) array."""

    points: np.ndarray

    @classmethod
    def from_rows(cls, rows) -> "InputSet":
        pts = np.atleast_2d(np.asarray(rows, dtype=float))
        if pts.ndim != 2:
            raise ValueError("inputs must form a 2-D array of row vectors")
        norms = np.linalg.norm(pts, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("the zero vector is not an admissible input")
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if np.array_equal(pts[i], pts[j]):
                    raise ValueError(f"inputs {i} and {j} coincide")
        pts = pts.copy()
        pts.setflags(write=False)
        return cls(pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def input_dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class CondCovSample:
    """One realized conditional covariance matrix of the output layer."""

    matrix: np.ndarray

    def __post_init__(self):
        vals = np.linalg.eigvalsh(self.matrix)
        scale = max(1.0, float(np.max(np.abs(self.matrix))))
        if vals[0] < -1e-10 * scale:
            raise ValueError(f"conditional covariance not PSD (min eig {vals[0]:.3e})")


def _check_compat(config: NetworkConfig, inputs: InputSet) -> None:
    if inputs.input_dim != config.input_dim:
        raise ValueError(
            f"inputs have dimension {inputs.input_dim}, config expects {config.input_dim}"
        )


def _layer_widths(config: NetworkConfig) -> list[int]:
    return [config.input_dim, *config.hidden_widths, config.output_copies]


def _sub_batch_sizes(count: int, widths: list[int]) -> Iterator[int]:
    biggest = max(widths[i] * widths[i + 1] for i in range(len(widths) - 1))
    cap = max(1, _BATCH_ELEMENT_CAP // biggest)
    while count > 0:
        take = min(cap, count)
        yield take
        count -= take


def _forward_batch(
    config: NetworkConfig, inputs: InputSet, rng: np.random.Generator, count: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw `count` networks; return outputs (count, n_out, d) and the last
    pre-activation hidden states (count, n_L, d)."""
    _check_compat(config, inputs)
    sigma = config.activation_fn
    widths = _layer_widths(config)
    b_scale = math.sqrt(config.bias_var)
    outs = []
    hiddens = []
    for sub in _sub_batch_sizes(count, widths):
        z = np.broadcast_to(inputs.points.T, (sub, config.input_dim, inputs.count))
        hidden = None
        for layer in range(1, len(widths)):
            w_out, w_in = widths[layer], widths[layer - 1]
            biases = b_scale * rng.standard_normal((sub, w_out))
            weights = rng.standard_normal((sub, w_out, w_in))
            source = z if layer == 1 else sigma(z)
            z = biases[:, :, None] + math.sqrt(config.weight_var / w_in) * np.einsum(
                "cop,cpd->cod", weights, source
            )
            if layer == len(widths) - 2:
                hidden = z
        outs.append(z)
        hiddens.append(hidden)
    return np.concatenate(outs), np.concatenate(hiddens)


def forward_sample(
    config: NetworkConfig, inputs: InputSet, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One forward pass at all inputs.

    Returns the output vector of length output_copies * d, ordered with the
    input index fastest within each output neuron, plus the last hidden
    pre-activation state as an (n_L, d) array.
    """
    out, hidden = _forward_batch(config, inputs, rng, 1)
    return out[0].reshape(-1), hidden[0]


def _cond_cov_batch(
    config: NetworkConfig, inputs: InputSet, rng: np.random.Generator, count: int
) -> np.ndarray:
    """Realized conditional covariances (count, d, d) from fresh hidden draws."""
    _check_compat(config, inputs)
    sigma = config.activation_fn
    widths = _layer_widths(config)[:-1]
    b_scale = math.sqrt(config.bias_var)
    out = []
    for sub in _sub_batch_sizes(count, widths):
        z = np.broadcast_to(inputs.points.T, (sub, config.input_dim, inputs.count))
        for layer in range(1, len(widths)):
            w_out, w_in = widths[layer], widths[layer - 1]
            biases = b_scale * rng.standard_normal((sub, w_out))
            weights = rng.standard_normal((sub, w_out, w_in))
            source = z if layer == 1 else sigma(z)
            z = biases[:, :, None] + math.sqrt(config.weight_var / w_in) * np.einsum(
                "cop,cpd->cod", weights, source
            )
        act = sigma(z)
        n_last = config.hidden_widths[-1]
        gram = np.einsum("cki,ckj->cij", act, act) * (config.weight_var / n_last)
        out.append(config.bias_var + gram)
    return np.concatenate(out)


def conditional_cov_sample(
    config: NetworkConfig, inputs: InputSet, rng: np.random.Generator
) -> CondCovSample:
    return CondCovSample(_cond_cov_batch(config, inputs, rng, 1)[0])


# --- limiting kernel ------------------------------------------------------


def arc_cosine_relu_expectation(cov) -> float:
    """Closed form for E[relu(U) relu(V)], (U, V) centered Gaussian.

    With correlation cos(theta), the value is
    sqrt(s11 s22) (sin(theta) + (pi - theta) cos(theta)) / (2 pi).
    Exact for all correlations including the degenerate endpoints.
    """
    C = np.asarray(cov, dtype=float)
    s11, s22, s12 = C[0, 0], C[1, 1], C[0, 1]
    if s11 <= 0.0 or s22 <= 0.0:
        raise NotPositiveDefinite("nonpositive variance in relu kernel")
    scale = math.sqrt(s11 * s22)
    c = min(1.0, max(-1.0, s12 / scale))
    theta = math.acos(c)
    return scale * (math.sin(theta) + (math.pi - theta) * c) / (2.0 * math.pi)


_POLAR_ORDER = 80


def relu_pair_expectation(cov) -> float:
    """E[relu(U) relu(V)] by kink-aware quadrature.

    The positive quadrant integral reduces to a smooth 1-D angular integral,
    int_0^{pi/2} 2 cos(psi) sin(psi) / q(psi)^2 dpsi / (2 pi sqrt(det S))
    with q(psi) the inverse-covariance quadratic form on the unit circle;
    Gauss-Legendre on the angle then converges geometrically. Tensorized
    Gauss-Hermite stalls near 1e-1 relative error here because the integrand
    kinks along the quadrant boundary, hence this dedicated path. Falls back
    to the closed form when the covariance is numerically rank one.
    """
    C = np.asarray(cov, dtype=float)
    s11, s22, s12 = C[0, 0], C[1, 1], C[0, 1]
    det = s11 * s22 - s12 * s12
    if det <= 1e-12 * s11 * s22:
        return arc_cosine_relu_expectation(C)
    inv = np.array([[s22, -s12], [-s12, s11]]) / det
    z, w = np.polynomial.legendre.leggauss(_POLAR_ORDER)
    psi = 0.25 * math.pi * (z + 1.0)
    half = 0.25 * math.pi
    cos_p, sin_p = np.cos(psi), np.sin(psi)
    q = inv[0, 0] * cos_p**2 + 2.0 * inv[0, 1] * cos_p * sin_p + inv[1, 1] * sin_p**2
    integral = half * np.sum(w * 2.0 * cos_p * sin_p / q**2)
    return float(integral / (2.0 * math.pi * math.sqrt(det)))


@dataclass(frozen=True, eq=False)
class LimitKernel:
    """Per-layer infinite-width covariance matrices, layers 1 .. L+1."""

    per_layer: tuple[SpdMatrix, ...]

    @property
    def output(self) -> SpdMatrix:
        return self.per_layer[-1]


_RELU_CROSSCHECK_TOL = 1e-6


def limit_kernel(
    config: NetworkConfig, inputs: InputSet, rule: QuadratureRule | None = None
) -> LimitKernel:
    """The limiting kernel recursion across layers.

    Layer 1 is the exact inner-product form; deeper layers integrate the
    activation product over the 2x2 marginals of the previous layer. For
    ReLU the pair integral uses the angular quadrature and is cross-checked
    against the arc-cosine closed form to 1e-6 on every entry.
    """
    from .gausslin import bivariate_gaussian_expectation

    _check_compat(config, inputs)
    if rule is None:
        rule = QuadratureRule.gauss_hermite()
    d = inputs.count
    sigma = config.activation_fn
    first = config.bias_var + (config.weight_var / config.input_dim) * (
        inputs.points @ inputs.points.T
    )
    layers = [as_spd(first)]
    for _ in range(2, config.depth + 2):
        prev = layers[-1].entries
        nxt = np.empty((d, d))
        for i in range(d):
            for j in range(i, d):
                marginal = np.array(
                    [[prev[i, i], prev[i, j]], [prev[i, j], prev[j, j]]]
                )
                if config.is_relu:
                    val = relu_pair_expectation(marginal)
                    closed = arc_cosine_relu_expectation(marginal)
                    if abs(val - closed) > _RELU_CROSSCHECK_TOL * max(1.0, abs(closed)):
                        raise ArithmeticError(
                            "relu kernel quadrature and closed form disagree: "
                            f"{val!r} vs {closed!r}"
                        )
                else:
                    val = bivariate_gaussian_expectation(
                        lambda a, b: sigma(a) * sigma(b), marginal, rule
                    )
                nxt[i, j] = nxt[j, i] = config.bias_var + config.weight_var * val
        layers.append(as_spd(nxt))
    return LimitKernel(tuple(layers))


# --- moment tensors -------------------------------------------------------


def canonical_pair_sequence(pairs) -> PairSeq:
    """Sort within pairs, then sort pairs; the symmetry-collapsed key."""
    return tuple(sorted(tuple(sorted(p)) for p in pairs))


def pair_sequences(dim: int, k: int) -> list[PairSeq]:
    """All canonical pair sequences of length k over {1..dim}^2."""
    base = [(a, b) for a in range(1, dim + 1) for b in range(a, dim + 1)]
    return [tuple(seq) for seq in combinations_with_replacement(base, k)]


@dataclass(frozen=True)
class MomentEntry:
    estimate: float
    stderr: float
    samples: int


@dataclass(frozen=True, eq=False)
class MomentTensor:
    """Estimates of E[Q_{a1 b1} ... Q_{ak bk}] keyed by canonical pair sequence."""

    dim: int
    k_max: int
    entries: dict[PairSeq, MomentEntry] = field(repr=False)

    def get(self, pairs) -> MomentEntry:
        key = canonical_pair_sequence(pairs)
        if len(key) == 0:
            return MomentEntry(1.0, 0.0, 0)
        try:
            return self.entries[key]
        except KeyError:
            raise KeyError(
                f"pair sequence {key} not covered (k_max={self.k_max}, dim={self.dim})"
            ) from None


def _moment_chunk(Q: np.ndarray, seqs: list[PairSeq]) -> tuple[np.ndarray, np.ndarray]:
    sums = np.empty(len(seqs))
    sumsqs = np.empty(len(seqs))
    for idx, seq in enumerate(seqs):
        prod = np.ones(Q.shape[0])
        for a, b in seq:
            prod = prod * Q[:, a - 1, b - 1]
        sums[idx] = prod.sum()
        sumsqs[idx] = (prod * prod).sum()
    return sums, sumsqs


def moment_tensor(
    config: NetworkConfig,
    inputs: InputSet,
    k_max: int,
    samples: int,
    stream: ChunkedStream,
    rule: QuadratureRule | None = None,
    threads: int = 1,
) -> MomentTensor:
    """Monte-Carlo moment estimates of the whitened covariance deviation.

    Chunked sampling with per-chunk generators; partial sums are reduced in
    chunk order, so the result does not depend on the thread count.
    """
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    if samples < 1000:
        raise ValueError("moment estimation needs at least 1000 samples")
    kernel = limit_kernel(config, inputs, rule).output
    sqrt_inv = kernel.sqrt_inv().entries
    d = inputs.count
    seqs: list[PairSeq] = []
    for k in range(1, k_max + 1):
        seqs.extend(pair_sequences(d, k))

    def work(args):
        _, count, gen = args
        A = _cond_cov_batch(config, inputs, gen, count)
        Q = np.einsum("ab,cbe,ef->caf", sqrt_inv, A - kernel.entries, sqrt_inv)
        return _moment_chunk(Q, seqs)

    chunks = list(stream.chunks(samples))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(work, chunks))
    else:
        partials = [work(c) for c in chunks]

    total_sum = np.zeros(len(seqs))
    total_sumsq = np.zeros(len(seqs))
    for sums, sumsqs in partials:
        total_sum += sums
        total_sumsq += sumsqs
    entries: dict[PairSeq, MomentEntry] = {}
    for idx, seq in enumerate(seqs):
        est = total_sum[idx] / samples
        var = max(0.0, total_sumsq[idx] / samples - est * est)
        entries[seq] = MomentEntry(est, math.sqrt(var / samples), samples)
    return MomentTensor(d, k_max, entries)


def config_hash(config: NetworkConfig, inputs: InputSet) -> str:
    payload = {
        "depth": config.depth,
        "input_dim": config.input_dim,
        "hidden_widths": list(config.hidden_widths),
        "output_copies": config.output_copies,
        "bias_var": repr(config.bias_var),
        "weight_var": repr(config.weight_var),
        "activation": config.activation if isinstance(config.activation, str) else "custom",
        "inputs": [[repr(v) for v in row] for row in inputs.points],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_moment_cache(
    path,
    tensor: MomentTensor,
    config: NetworkConfig,
    inputs: InputSet,
    kernel: SpdMatrix,
    samples: int,
    seed: int,
) -> None:
    doc = {
        "configHash": config_hash(config, inputs),
        "kernel": kernel.entries.tolist(),
        "kMax": tensor.k_max,
        "samples": samples,
        "seed": seed,
        "entries": [
            {
                "pairs": [list(p) for p in seq],
                "estimate": entry.estimate,
                "stderr": entry.stderr,
            }
            for seq, entry in sorted(tensor.entries.items())
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_moment_cache(path) -> tuple[MomentTensor, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    entries = {}
    dim = 1
    for item in doc["entries"]:
        seq = canonical_pair_sequence(tuple(tuple(p) for p in item["pairs"]))
        dim = max(dim, *(max(p) for p in seq)) if seq else dim
        entries[seq] = MomentEntry(item["estimate"], item["stderr"], doc["samples"])
    meta = {k: doc[k] for k in ("configHash", "kernel", "kMax", "samples", "seed")}
    return MomentTensor(dim, doc["kMax"], entries), meta


# --- exact shallow ReLU example -------------------------------------------

SHALLOW_WEIGHT_VAR = math.sqrt(2.0)


def shallow_example_config(n1: int) -> NetworkConfig:
    """Depth-1 ReLU network, scalar input 1.0, C_W = sqrt(2), C_b = 0.

    The first-layer kernel is sqrt(2) and the output kernel is exactly 1,
    which makes the whitened deviation equal to A - 1 and every moment a
    rational number."""
    return NetworkConfig(
        depth=1,
        input_dim=1,
        hidden_widths=(n1,),
        output_copies=1,
        bias_var=0.0,
        weight_var=SHALLOW_WEIGHT_VAR,
        activation="relu",
    )


def shallow_example_inputs() -> InputSet:
    return InputSet.from_rows([[1.0]])


def is_shallow_example(config: NetworkConfig, inputs: InputSet) -> bool:
    return (
        config.depth == 1
        and config.input_dim == 1
        and config.output_copies == 1
        and config.bias_var == 0.0
        and abs(config.weight_var - SHALLOW_WEIGHT_VAR) < 1e-12
        and config.activation == "relu"
        and inputs.count == 1
        and inputs.points.shape == (1, 1)
        and float(inputs.points[0, 0]) == 1.0
    )


def _partitions_min_two(items: tuple[int, ...]) -> Iterator[tuple[tuple[int, ...], ...]]:
    """Set partitions of `items` whose blocks all have size >= 2."""
    if not items:
        yield ()
        return
    first, rest = items[0], items[1:]
    # the first element must share its block with at least one other
    for size in range(1, len(rest) + 1):
        for others in combinations(rest, size):
            block = (first, *others)
            remaining = tuple(x for x in rest if x not in others)
            for sub in _partitions_min_two(remaining):
                yield (block, *sub)


def _scaled_central_moment(p: int) -> Fraction:
    """E[(Y - 1/2)^p] with Y = relu(N(0, sqrt(2)))^2 / sqrt(2).

    E[Y^j] = (2j - 1)!! / 2 for j >= 1 from half-Gaussian moments, so every
    central moment is rational."""
    total = Fraction(0)
    for j in range(p + 1):
        raw = Fraction(1) if j == 0 else Fraction(_double_factorial(2 * j - 1), 2)
        total += math.comb(p, j) * raw * Fraction(-1, 2) ** (p - j)
    return total


def _double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def shallow_relu_moments(n1: int, k: int) -> Fraction:
    """Exact E[Q^k] for the shallow ReLU example at hidden width n1.

    Q = (2/n1) sum_i (Y_i - 1/2) with the Y_i i.i.d. as in
    `_scaled_central_moment`; the i.i.d.-sum moment is assembled over set
    partitions with no singleton blocks and falling-factorial counting.
    """
    if n1 < 1:
        raise ValueError("width must be >= 1")
    if not 1 <= k <= 4:
        raise ValueError(f"moment order must be in 1..4, got {k}")
    total = Fraction(0)
    for partition in _partitions_min_two(tuple(range(k))):
        blocks = len(partition)
        falling = Fraction(1)
        for b in range(blocks):
            falling *= n1 - b
        contrib = falling
        for block in partition:
            contrib *= _scaled_central_moment(len(block))
        total += contrib
    return Fraction(2, n1) ** k * total


def shallow_relu_moment_tensor(n1: int, k_max: int) -> MomentTensor:
    """Exact moment tensor (d = 1) for the shallow example, zero stderr."""
    entries = {}
    for k in range(1, k_max + 1):
        seq = tuple(((1, 1),) * k)
        entries[seq] = MomentEntry(float(shallow_relu_moments(n1, k)), 0.0, 0)
    return MomentTensor(1, k_max, entries)


# --- deviation moments for the bound formulas ------------------------------


@dataclass(frozen=True)
class DeviationMoments:
    """Monte-Carlo moments of A - K used by the TV bound formulas."""

    even_2m: float
    even_2m_stderr: float
    abs_2m1: float
    abs_2m1_stderr: float
    op_2m: float
    op_4m: float
    samples: int


def deviation_moments(
    config: NetworkConfig,
    inputs: InputSet,
    m: int,
    samples: int,
    stream: ChunkedStream,
    coord: int = 1,
    rule: QuadratureRule | None = None,
    threads: int = 1,
) -> DeviationMoments:
    """Estimate E[(A_jj - K_jj)^{2m}], E[|A_jj - K_jj|^{2m+1}], and the
    operator-norm moments E[||A - K||^{2m}], E[||A - K||^{4m}]."""
    if m < 1:
        raise ValueError("m must be >= 1")
    kernel = limit_kernel(config, inputs, rule).output
    j = coord - 1
    d = inputs.count

    def work(args):
        _, count, gen = args
        A = _cond_cov_batch(config, inputs, gen, count)
        diff = A - kernel.entries
        delta = diff[:, j, j]
        if d == 1:
            op = np.abs(delta)
        else:
            op = np.max(np.abs(np.linalg.eigvalsh(diff)), axis=1)
        even = delta ** (2 * m)
        odd = np.abs(delta) ** (2 * m + 1)
        return np.array(
            [
                even.sum(),
                (even * even).sum(),
                odd.sum(),
                (odd * odd).sum(),
                (op ** (2 * m)).sum(),
                (op ** (4 * m)).sum(),
            ]
        )

    chunks = list(stream.chunks(samples))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(work, chunks))
    else:
        partials = [work(c) for c in chunks]
    acc = np.zeros(6)
    for part in partials:
        acc += part
    even = acc[0] / samples
    odd = acc[2] / samples
    even_se = math.sqrt(max(0.0, acc[1] / samples - even * even) / samples)
    odd_se = math.sqrt(max(0.0, acc[3] / samples - odd * odd) / samples)
    return DeviationMoments(
        even, even_se, odd, odd_se, acc[4] / samples, acc[5] / samples, samples
    )
