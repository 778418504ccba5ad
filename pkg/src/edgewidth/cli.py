"""Command-line front end.

Each run is driven by a single JSON config file validated against a strict
schema (unknown keys are rejected, the seed is mandatory), so that every
emitted artifact can be traced back to one document. Outputs are CSV or
JSON with a header recording the config digest and seed; identical
(config, seed) pairs produce
byte-identical files regardless of --threads. With --plot a PNG rendering
of the tabulated data is written next to each CSV.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 verification
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import __version__
from . import bayes as bayes_mod
from . import edgeworth as edgeworth_mod
from . import hermite as hermite_mod
from . import multiindex as multiindex_mod
from .bayes import Dataset, DegenerateNormalizer, GaussianLikelihood
from .edgeworth import EdgeworthModel, edgeworth_density_grid
from .gausslin import NotPositiveDefinite, as_spd, gaussian_density
from .metrics import GridSpec, prior_tv_scan, true_density_grid
from .network import (
    InputSet,
    MomentTensor,
    NetworkConfig,
    is_shallow_example,
    limit_kernel,
    moment_tensor,
    shallow_relu_moment_tensor,
    shallow_relu_moments,
)
from .streams import ChunkedStream

log = logging.getLogger(__name__)


class ConfigError(Exception):
    """Anything wrong with the config document or flag combination."""


_NETWORK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["depth", "input_dim", "hidden_widths", "activation"],
    "properties": {
        "depth": {"type": "integer", "minimum": 1},
        "input_dim": {"type": "integer", "minimum": 1},
        "hidden_widths": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "integer", "minimum": 1},
        },
        "output_copies": {"type": "integer", "minimum": 1},
        "bias_var": {"type": "number", "minimum": 0},
        "weight_var": {"type": "number", "exclusiveMinimum": 0},
        "activation": {"enum": ["relu", "tanh", "identity"]},
    },
}

_GRID_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["lo", "hi", "count"],
    "properties": {
        "lo": {"type": "number"},
        "hi": {"type": "number"},
        "count": {"type": "integer", "minimum": 33},
        "dim": {"type": "integer", "minimum": 1, "maximum": 3},
    },
}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["network", "inputs", "seed"],
    "properties": {
        "network": _NETWORK_SCHEMA,
        "inputs": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "samples": {"type": "integer", "minimum": 1000},
        "threads": {"type": "integer", "minimum": 1},
        "grid": _GRID_SCHEMA,
        "experiment": {"type": "object"},
        "out": {"type": "string"},
    },
}

_ORDERS_ITEM = {"type": "integer", "minimum": 1, "maximum": 2}

EXPERIMENT_SCHEMAS = {
    "kernel": {"type": "object", "additionalProperties": False, "properties": {}},
    "coeffs": {
        "type": "object",
        "additionalProperties": False,
        "properties": {"k_max": {"type": "integer", "minimum": 1, "maximum": 4}},
    },
    "density": {
        "type": "object",
        "additionalProperties": False,
        "properties": {"k_max": {"type": "integer", "minimum": 0, "maximum": 4}},
    },
    "tv-scan": {
        "type": "object",
        "additionalProperties": False,
        "required": ["widths"],
        "properties": {
            "target": {"enum": ["prior", "posterior"]},
            "widths": {
                "type": "array",
                "minItems": 1,
                "items": {"type": "integer", "minimum": 1},
            },
            "orders": {"type": "array", "minItems": 1, "items": _ORDERS_ITEM},
            "moment_samples": {"type": "integer", "minimum": 1000},
            "labels": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        },
    },
    "posterior": {
        "type": "object",
        "additionalProperties": False,
        "required": ["labels", "m"],
        "properties": {
            "labels": {"type": "array", "minItems": 1, "items": {"type": "number"}},
            "m": _ORDERS_ITEM,
        },
    },
    "predict": {
        "type": "object",
        "additionalProperties": False,
        "required": ["labels", "x_star", "bins"],
        "properties": {
            "labels": {"type": "array", "minItems": 1, "items": {"type": "number"}},
            "x_star": {"type": "array", "minItems": 1, "items": {"type": "number"}},
            "bins": {"type": "array", "minItems": 2, "items": {"type": "number"}},
        },
    },
}


def _schema_errors(schema: dict, doc, where: str) -> None:
    validator = Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        parts = []
        for err in errors[:5]:
            loc = ".".join(str(p) for p in err.absolute_path) or where
            parts.append(f"{loc}: {err.message}")
        raise ConfigError("; ".join(parts))


def load_run_config(path, command: str, seed_override: int | None = None) -> dict:
    if path is None:
        raise ConfigError(f"the {command} command requires --config")
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    _schema_errors(RUN_CONFIG_SCHEMA, doc, "config")
    if command in EXPERIMENT_SCHEMAS:
        _schema_errors(EXPERIMENT_SCHEMAS[command], doc.get("experiment", {}), "experiment")
    if seed_override is not None:
        if not 0 <= seed_override < 2**64:
            raise ConfigError("--seed must fit in 64 bits")
        doc["seed"] = seed_override
    return doc


def _network_from(doc: dict) -> NetworkConfig:
    net = doc["network"]
    try:
        return NetworkConfig(
            depth=net["depth"],
            input_dim=net["input_dim"],
            hidden_widths=tuple(net["hidden_widths"]),
            output_copies=net.get("output_copies", 1),
            bias_var=float(net.get("bias_var", 0.0)),
            weight_var=float(net.get("weight_var", 1.0)),
            activation=net["activation"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _inputs_from(doc: dict) -> InputSet:
    try:
        return InputSet.from_rows(doc["inputs"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _grid_from(doc: dict) -> GridSpec:
    if "grid" not in doc:
        raise ConfigError("this command requires a grid block")
    g = doc["grid"]
    try:
        return GridSpec.uniform(g["lo"], g["hi"], g["count"], g.get("dim", 1))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _doc_hash(doc: dict) -> str:
    hashed = {k: v for k, v in doc.items() if k != "out"}
    blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _header(doc: dict) -> str:
    return f"# edgewidth v{__version__} config={_doc_hash(doc)} seed={doc['seed']}"


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        raise TypeError("booleans do not belong in output tables")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(out, doc: dict, columns, rows, extra_comments=()) -> None:
    lines = [_header(doc)]
    lines.extend(extra_comments)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _write_json(out, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=1) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _resolve(args, doc: dict, default_samples: int) -> tuple[int, int, int]:
    seed = doc["seed"]
    samples = doc.get("samples", default_samples)
    threads = args.threads if args.threads is not None else doc.get("threads", 1)
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    return seed, samples, threads


def _moments_for(
    config: NetworkConfig,
    inputs: InputSet,
    k_max: int,
    samples: int,
    seed: int,
    threads: int,
) -> MomentTensor:
    """Exact rational moments for the shallow example, Monte Carlo otherwise."""
    if k_max == 0:
        return MomentTensor(inputs.count, 0, {})
    if is_shallow_example(config, inputs):
        return shallow_relu_moment_tensor(config.hidden_widths[0], max(k_max, 4))
    stream = ChunkedStream(seed, "moment-mc")
    return moment_tensor(config, inputs, k_max, samples, stream, threads=threads)


# --- commands ---------------------------------------------------------------


def cmd_kernel(args) -> int:
    doc = load_run_config(args.config, "kernel", args.seed)
    config = _network_from(doc)
    inputs = _inputs_from(doc)
    kern = limit_kernel(config, inputs)
    payload = {
        "version": __version__,
        "configHash": _doc_hash(doc),
        "seed": doc["seed"],
        "layers": [layer.entries.tolist() for layer in kern.per_layer],
        "output": kern.output.entries.tolist(),
    }
    _write_json(args.out, payload)
    return 0


def cmd_coeffs(args) -> int:
    doc = load_run_config(args.config, "coeffs", args.seed)
    config = _network_from(doc)
    inputs = _inputs_from(doc)
    seed, samples, threads = _resolve(args, doc, 100_000)
    k_max = doc.get("experiment", {}).get("k_max", 3)
    kern = limit_kernel(config, inputs)
    tensor = moment_tensor(
        config, inputs, k_max, samples, ChunkedStream(seed, "moment-mc"), threads=threads
    )
    payload = {
        "version": __version__,
        "configHash": _doc_hash(doc),
        "seed": seed,
        "samples": samples,
        "kMax": k_max,
        "kernel": kern.output.entries.tolist(),
        "entries": [
            {
                "pairs": [list(p) for p in seq],
                "estimate": entry.estimate,
                "stderr": entry.stderr,
            }
            for seq, entry in sorted(tensor.entries.items())
        ],
    }
    if is_shallow_example(config, inputs):
        n1 = config.hidden_widths[0]
        curve = edgeworth_mod.shallow_curve_coefficients(n1, "edg2")
        payload["shallowExact"] = {
            "width": n1,
            "moments": {
                str(k): str(shallow_relu_moments(n1, k)) for k in range(1, 5)
            },
            "h4": str(curve[4]),
            "h6": str(curve[6]),
            "h8_printed": str(curve[8]),
            "h8_exact": str(edgeworth_mod.shallow_exact_h8_coefficient(n1)),
        }
    _write_json(args.out, payload)
    return 0


def cmd_density(args) -> int:
    doc = load_run_config(args.config, "density", args.seed)
    config = _network_from(doc)
    inputs = _inputs_from(doc)
    grid = _grid_from(doc)
    seed, samples, threads = _resolve(args, doc, 200_000)
    k_max = doc.get("experiment", {}).get("k_max", 3)
    nd = inputs.count * config.output_copies
    if grid.dim != nd:
        raise ConfigError(f"grid dimension {grid.dim} does not match output dimension {nd}")

    kernel = limit_kernel(config, inputs).output
    moments = _moments_for(config, inputs, k_max, samples, seed, threads)
    model = EdgeworthModel(kernel, moments, config.output_copies, k_max)
    pts = grid.points()
    gamma = edgeworth_density_grid(model, pts)
    gauss = model.gaussian_part(pts)

    columns = [f"x_{i + 1}" for i in range(nd)] + ["gamma", "gaussian"]
    table = [pts[:, i] for i in range(nd)] + [gamma, gauss]

    if is_shallow_example(config, inputs):
        n1 = config.hidden_widths[0]
        exact_cm = {j: float(shallow_relu_moments(n1, j)) for j in range(1, 5)}
        truth = true_density_grid(
            config,
            inputs,
            pts,
            samples,
            ChunkedStream(seed, "density-mc"),
            exact_central_moments=exact_cm,
            kernel=kernel,
            threads=threads,
        )
        x = pts[:, 0]
        columns += [
            "true",
            "true_stderr",
            "edg1",
            "intermediate",
            "edg2_printed",
            "edg2_exact",
        ]
        table += [
            truth.estimate,
            truth.stderr,
            edgeworth_mod.shallow_relu_density(n1, "edg1", x),
            edgeworth_mod.shallow_relu_density(n1, "intermediate", x),
            edgeworth_mod.shallow_relu_density(n1, "edg2", x),
            edgeworth_mod.shallow_exact_curve(n1, 4, x),
        ]

    rows = zip(*table)
    _write_csv(args.out, doc, columns, rows)
    if args.plot:
        _plot_density(args.out, columns, table)
    return 0


def cmd_tv_scan(args) -> int:
    doc = load_run_config(args.config, "tv-scan", args.seed)
    config = _network_from(doc)
    inputs = _inputs_from(doc)
    grid = _grid_from(doc)
    seed, samples, threads = _resolve(args, doc, 200_000)
    exp = doc.get("experiment", {})
    widths = exp["widths"]
    orders = exp.get("orders", [1, 2])
    moment_samples = exp.get("moment_samples")
    target = exp.get("target", "prior")
    if target == "posterior":
        if "labels" not in exp:
            raise ConfigError("a posterior tv-scan requires experiment.labels")
        dataset = _dataset_from(inputs, exp["labels"])
        rows = bayes_mod.posterior_tv_scan(
            config,
            dataset,
            widths,
            orders,
            samples,
            grid,
            seed,
            moment_samples=moment_samples,
            threads=threads,
        )
    else:
        rows = prior_tv_scan(
            config,
            inputs,
            widths,
            orders,
            samples,
            grid,
            seed,
            moment_samples=moment_samples,
            threads=threads,
        )
    columns = [
        "width",
        "m",
        "tv",
        "tv_tail_bound",
        "tv_mc_noise",
        "lower_bound",
        "upper_bound_estimate",
        "seed",
    ]
    data = [
        (
            r.width,
            r.m,
            r.tv,
            r.tail_bound,
            r.mc_noise,
            r.lower_bound,
            r.upper_bound_estimate,
            r.seed,
        )
        for r in rows
    ]
    _write_csv(args.out, doc, columns, data)
    if args.plot:
        _plot_tv_scan(args.out, data)
    return 0


def _dataset_from(inputs: InputSet, labels) -> Dataset:
    try:
        return Dataset.from_pairs(inputs, labels)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_posterior(args) -> int:
    doc = load_run_config(args.config, "posterior", args.seed)
    config = _network_from(doc)
    inputs = _inputs_from(doc)
    grid = _grid_from(doc)
    seed, samples, threads = _resolve(args, doc, 200_000)
    exp = doc["experiment"]
    dataset = _dataset_from(inputs, exp["labels"])
    m = exp["m"]
    if dataset.size != 1 or grid.dim != 1:
        raise ConfigError("the posterior table is a scalar-dataset grid artifact")

    kernel = limit_kernel(config, inputs).output
    moments = _moments_for(config, inputs, 2 * m - 1, samples, seed, threads)
    shallow = is_shallow_example(config, inputs)
    exact_cm = (
        {j: float(shallow_relu_moments(config.hidden_widths[0], j)) for j in range(1, 5)}
        if shallow
        else None
    )
    pts = grid.points()
    truth = true_density_grid(
        config,
        inputs,
        pts,
        samples,
        ChunkedStream(seed, "density-mc"),
        exact_central_moments=exact_cm,
        kernel=kernel,
        threads=threads,
    )
    like = GaussianLikelihood(dataset.labels)
    like_vals = like(pts)
    mass = float(np.sum(like_vals * truth.estimate)) * grid.cell_volume
    if abs(mass) < bayes_mod.NORMALIZER_FLOOR:
        raise DegenerateNormalizer("likelihood mass under the true law vanishes")
    post_true = like_vals * truth.estimate / mass

    closed = bayes_mod.posterior_closed_form(kernel, dataset, moments, m)
    post_edge = closed.density(pts)
    post_gauss = gaussian_density(closed.precision.inv(), pts - closed.mean)

    columns = ["x", "posterior_true", "posterior_edgeworth", "posterior_gaussian"]
    table = [pts[:, 0], post_true, post_edge, post_gauss]
    _write_csv(args.out, doc, columns, zip(*table))
    if args.plot:
        _plot_posterior(args.out, table)
    return 0


def cmd_predict(args) -> int:
    doc = load_run_config(args.config, "predict", args.seed)
    config = _network_from(doc)
    inputs = _inputs_from(doc)
    seed, samples, threads = _resolve(args, doc, 100_000)
    del threads  # the forward pass is chunk-sequential here
    exp = doc["experiment"]
    dataset = _dataset_from(inputs, exp["labels"])
    try:
        result = bayes_mod.predictive_distribution(
            config,
            dataset,
            exp["x_star"],
            exp["bins"],
            samples,
            ChunkedStream(seed, "predictive-mc"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    columns = ["bin_lo", "bin_hi", "prob", "stderr"]
    rows = list(result.rows())
    _write_csv(
        args.out,
        doc,
        columns,
        rows,
        extra_comments=(f"# ess={result.ess!r} samples={result.samples}",),
    )
    if args.plot:
        _plot_predict(args.out, rows)
    return 0


# --- verify -----------------------------------------------------------------


def _check_hermite_coefficients() -> None:
    """Coefficient formula equals the exact Fraction recurrence, degrees <= 12."""
    prev = {0: Fraction(1)}
    cur = {1: Fraction(1)}
    for j in range(0, 13):
        if j == 0:
            table = prev
        elif j == 1:
            table = cur
        else:
            table = {}
            for p, c in cur.items():
                table[p + 1] = table.get(p + 1, Fraction(0)) + c
            for p, c in prev.items():
                table[p] = table.get(p, Fraction(0)) - (j - 1) * c
            table = {p: c for p, c in table.items() if c != 0}
            prev, cur = cur, table
        coeffs = hermite_mod.hermite_coeffs(j)
        got = {p: c for p, c in enumerate(coeffs.coeffs) if c != 0}
        if got != table:
            raise AssertionError(f"degree {j}: formula {got} != recurrence {table}")


def _check_hermite_eval() -> None:
    """Float recurrence agrees with exact coefficient evaluation."""
    xs = np.linspace(-3.0, 3.0, 13)
    for j in range(0, 13):
        coeffs = hermite_mod.hermite_coeffs(j)
        exact = np.array([coeffs.eval(float(x)) for x in xs])
        got = hermite_mod.hermite_eval(j, xs)
        scale = np.maximum(1.0, np.abs(exact))
        if np.max(np.abs(got - exact) / scale) > 1e-9:
            raise AssertionError(f"degree {j} recurrence drifts from exact coefficients")


def _check_counts() -> None:
    """Composition and arrangement counts match the closed-form identities."""
    for p in range(1, 5):
        for k in range(1, 3):
            S = multiindex_mod.enumerate_S(p, k)
            if len(S) != math.comb(2 * k + p - 1, p - 1):
                raise AssertionError(f"|S({p},{k})| = {len(S)}")
            if len(S) != multiindex_mod.count_S(p, k):
                raise AssertionError("count_S disagrees with enumeration")
            total = sum(multiindex_mod.count_A(J) for J in S)
            if total != p ** (2 * k):
                raise AssertionError(f"sum |A_J| = {total} != {p}^{2 * k}")


def _seeded_verify_model() -> EdgeworthModel:
    rng = np.random.default_rng(7)
    B = rng.normal(size=(2, 2))
    kernel = as_spd(B @ B.T + 2.0 * np.eye(2))
    entries = {}
    from .network import MomentEntry, pair_sequences

    for k in range(1, 4):
        for seq in pair_sequences(2, k):
            entries[seq] = MomentEntry(float(rng.normal() * 0.05 / k), 0.0, 0)
    return EdgeworthModel(kernel, MomentTensor(2, 3, entries), 1, 3)


def _check_dual_paths() -> None:
    """Grouped-table evaluation equals the tuple walk and the literal sum."""
    model = _seeded_verify_model()
    rng = np.random.default_rng(11)
    pts = rng.normal(size=(20, 2)) * 1.5
    base = edgeworth_mod.edgeworth_density(model, pts, method="table")
    for method in ("tuples", "literal"):
        other = edgeworth_mod.edgeworth_density(model, pts, method=method)
        gap = np.max(np.abs(base - other))
        if gap > 1e-12:
            raise AssertionError(f"{method} path deviates from table path by {gap:.2e}")


def _check_unit_mass() -> None:
    """The signed density integrates to one (shallow width-50 expansion)."""
    moments = shallow_relu_moment_tensor(50, 4)
    kernel = as_spd(np.array([[1.0]]))
    model = EdgeworthModel(kernel, moments, 1, 3)
    mass = edgeworth_mod.total_mass(model, tol=1e-6)
    if abs(mass - 1.0) > 1e-5:
        raise AssertionError(f"total mass {mass!r} is off by {abs(mass - 1.0):.2e}")


def _check_taylor_term() -> None:
    """First two interpolation derivatives match central finite differences."""
    rng = np.random.default_rng(23)
    B = rng.normal(size=(2, 2))
    K = B @ B.T + 2.0 * np.eye(2)
    C = rng.normal(size=(2, 2)) * 0.2
    A = K + C + C.T
    x = rng.normal(size=2)
    h = 1e-3
    for k in (1, 2):
        def phi(t):
            return edgeworth_mod.density_taylor_term(K, A, 1, 0, t, x)

        if k == 1:
            fd = (phi(0.5 + h) - phi(0.5 - h)) / (2 * h)
        else:
            fd = (phi(0.5 + h) - 2 * phi(0.5) + phi(0.5 - h)) / (h * h)
        got = edgeworth_mod.density_taylor_term(K, A, 1, k, 0.5, x)
        if abs(got - fd) > 1e-5 * max(1.0, abs(fd)):
            raise AssertionError(f"k={k} derivative {got!r} vs finite difference {fd!r}")


def _check_parity_indicator() -> None:
    """The even-parity indicator in the normalizer is exactly redundant."""
    moments = shallow_relu_moment_tensor(40, 4)
    kernel = as_spd(np.array([[1.0]]))
    dataset = Dataset.from_pairs([[1.0]], [0.7])
    with_flag = bayes_mod.normalizing_constant(
        kernel, dataset, moments, 2, apply_parity_indicator=True
    )
    without = bayes_mod.normalizing_constant(
        kernel, dataset, moments, 2, apply_parity_indicator=False
    )
    if with_flag != without:
        raise AssertionError(f"{with_flag!r} != {without!r}")


VERIFY_CHECKS = {
    "hermite-coefficients": _check_hermite_coefficients,
    "hermite-recurrence": _check_hermite_eval,
    "index-counts": _check_counts,
    "dual-path-equivalence": _check_dual_paths,
    "unit-mass": _check_unit_mass,
    "taylor-term": _check_taylor_term,
    "normalizer-parity": _check_parity_indicator,
}


def cmd_verify(args) -> int:
    failed = 0
    for name in sorted(VERIFY_CHECKS):
        try:
            VERIFY_CHECKS[name]()
        except Exception as exc:
            failed += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"PASS {name}")
    if failed:
        print(f"{failed} of {len(VERIFY_CHECKS)} checks failed")
        return 4
    print(f"all {len(VERIFY_CHECKS)} checks passed")
    return 0


# --- plotting ---------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _png_path(out) -> Path:
    return Path(out).with_suffix(".png")


_CURVE_STYLES = {
    "gamma": ("expansion", "C0", "-"),
    "gaussian": ("gaussian", "C1", "--"),
    "true": ("true (MC)", "k", ":"),
    "edg1": ("H4 curve", "C2", "-."),
    "intermediate": ("H4+H6 curve", "C4", "-."),
    "edg2_printed": ("H4+H6+H8 (printed)", "C3", "-."),
    "edg2_exact": ("H4+H6+H8 (exact)", "C5", "-."),
}


def _plot_density(out, columns, table) -> None:
    plt = _pyplot()
    x = table[columns.index("x_1")]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, (label, color, style) in _CURVE_STYLES.items():
        if name in columns:
            ax.plot(x, table[columns.index(name)], style, color=color, label=label, lw=1.2)
    ax.set_xlabel("output value")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(_png_path(out), dpi=150)
    plt.close(fig)


def _plot_tv_scan(out, data) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    by_m: dict[int, list] = {}
    for row in data:
        by_m.setdefault(row[1], []).append(row)
    for m, rows in sorted(by_m.items()):
        w = [r[0] for r in rows]
        ax.loglog(w, [r[2] for r in rows], "o-", label=f"TV, m={m}")
        if any(r[5] > 0 for r in rows):
            ax.loglog(w, [r[5] for r in rows], "v--", alpha=0.6, label=f"lower, m={m}")
        ax.loglog(w, [r[6] for r in rows], "^--", alpha=0.6, label=f"upper, m={m}")
    ax.set_xlabel("width")
    ax.set_ylabel("total variation")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(_png_path(out), dpi=150)
    plt.close(fig)


def _plot_posterior(out, table) -> None:
    plt = _pyplot()
    x, post_true, post_edge, post_gauss = table
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(x, post_true, "k:", label="true posterior")
    ax.plot(x, post_edge, "C0-", label="expansion posterior")
    ax.plot(x, post_gauss, "C1--", label="gaussian posterior")
    ax.set_xlabel("output value")
    ax.set_ylabel("posterior density")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(_png_path(out), dpi=150)
    plt.close(fig)


def _plot_predict(out, rows) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    lo = [r[0] for r in rows]
    widths = [r[1] - r[0] for r in rows]
    ax.bar(lo, [r[2] for r in rows], width=widths, align="edge",
           yerr=[r[3] for r in rows], color="C0", alpha=0.8, edgecolor="w")
    ax.set_xlabel("predictive output")
    ax.set_ylabel("bin probability")
    fig.tight_layout()
    fig.savefig(_png_path(out), dpi=150)
    plt.close(fig)


# --- entry point ------------------------------------------------------------

_COMMANDS = {
    "kernel": cmd_kernel,
    "coeffs": cmd_coeffs,
    "density": cmd_density,
    "tv-scan": cmd_tv_scan,
    "posterior": cmd_posterior,
    "predict": cmd_predict,
    "verify": cmd_verify,
}

_HELP = {
    "kernel": "write the per-layer limiting kernels as JSON",
    "coeffs": "estimate whitened deviation moments, with exact rationals when available",
    "density": "tabulate the expansion density on a grid (CSV)",
    "tv-scan": "scan TV against width for the prior or posterior comparison",
    "posterior": "tabulate true, expansion, and gaussian posteriors (CSV)",
    "predict": "binned posterior predictive at a new input (CSV)",
    "verify": "run the built-in invariant checks",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgewidth",
        description="Edgeworth expansions for finite-width network output laws",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in _COMMANDS.items():
        cmd = sub.add_parser(name, help=_HELP[name])
        cmd.add_argument("--config", help="path to the JSON run config")
        cmd.add_argument("--out", help="output file (stdout when omitted)")
        cmd.add_argument("--seed", type=int, help="override the config seed")
        cmd.add_argument("--threads", type=int, help="worker threads (output-invariant)")
        cmd.add_argument("--plot", action="store_true", help="render a PNG next to the CSV")
        cmd.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.plot and args.out is None and args.command != "verify":
        print("error: config: --plot requires --out", file=sys.stderr)
        return 2
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (KeyError, TypeError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (
        NotPositiveDefinite,
        DegenerateNormalizer,
        ArithmeticError,
        np.linalg.LinAlgError,
        RuntimeError,
        ValueError,
    ) as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
