import json

import numpy as np
import pytest

from edgewidth import (
    EdgeworthModel,
    MomentEntry,
    MomentTensor,
    as_spd,
    shallow_example_config,
    shallow_example_inputs,
    shallow_relu_moment_tensor,
)
from edgewidth.network import pair_sequences


@pytest.fixture
def shallow50():
    """Width-50 shallow ReLU example: config, inputs, exact moment tensor."""
    return shallow_example_config(50), shallow_example_inputs(), shallow_relu_moment_tensor(50, 4)


def random_spd(rng, dim, scale=1.0):
    B = rng.normal(size=(dim, dim))
    return as_spd(B @ B.T + (1.0 + scale) * np.eye(dim))


def random_moment_tensor(rng, dim, k_max, magnitude=0.05):
    """Synthetic small moment entries, one per canonical pair sequence."""
    entries = {}
    for k in range(1, k_max + 1):
        for seq in pair_sequences(dim, k):
            entries[seq] = MomentEntry(float(rng.normal() * magnitude / k), 0.0, 0)
    return MomentTensor(dim, k_max, entries)


def random_model(rng, dim, k_max=3, block_count=1, magnitude=0.05):
    kernel = random_spd(rng, dim)
    return EdgeworthModel(kernel, random_moment_tensor(rng, dim, k_max, magnitude), block_count, k_max)


def write_config(path, **overrides):
    """A minimal valid run config, overridable per test."""
    doc = {
        "network": {
            "depth": 1,
            "input_dim": 1,
            "hidden_widths": [50],
            "output_copies": 1,
            "bias_var": 0.0,
            "weight_var": 1.4142135623730951,
            "activation": "relu",
        },
        "inputs": [[1.0]],
        "seed": 1234,
        "samples": 20000,
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc, indent=1))
    return path
