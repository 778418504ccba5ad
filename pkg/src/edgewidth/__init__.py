"""Edgeworth expansions for the output law of finite-width networks.

The package builds signed-density corrections to the Gaussian infinite-width
limit of a fully connected network at random initialization, estimates the
total-variation gap against the true law, and carries the same expansion
through Bayesian posterior and predictive computations.
"""

__version__ = "0.1.0"

from .bayes import (
    Dataset,
    DegenerateNormalizer,
    GaussianLikelihood,
    PosteriorClosedForm,
    PredictiveResult,
    normalizing_constant,
    posterior_closed_form,
    posterior_curve,
    posterior_density_edgeworth,
    posterior_tv_scan,
    predictive_distribution,
)
from .edgeworth import (
    EdgeworthModel,
    density_taylor_term,
    edgeworth_density,
    edgeworth_density_grid,
    shallow_curve_coefficients,
    shallow_exact_curve,
    shallow_exact_h8_coefficient,
    shallow_relu_density,
    total_mass,
)
from .gausslin import (
    NotPositiveDefinite,
    QuadratureRule,
    SpdMatrix,
    as_spd,
    bivariate_gaussian_expectation,
    gaussian_density,
    spd_sqrt,
)
from .hermite import (
    HermiteCoeffs,
    hermite_coeffs,
    hermite_eval,
    hermite_product_moment_centered,
    hermite_product_moment_shifted,
    hermite_table,
)
from .metrics import (
    CosProbeResult,
    GridSpec,
    RateFit,
    TvReport,
    TvScanRow,
    cos_probe,
    edgeworth_lower_bound,
    edgeworth_upper_bound,
    fit_rate,
    negative_mass_fraction,
    prior_tv_scan,
    true_density,
    true_density_grid,
    tv_on_grid,
)
from .multiindex import (
    block_admissible,
    block_tuples,
    count_A,
    count_S,
    counts_of,
    enumerate_A,
    enumerate_S,
)
from .network import (
    DeviationMoments,
    InputSet,
    LimitKernel,
    MomentEntry,
    MomentTensor,
    NetworkConfig,
    arc_cosine_relu_expectation,
    conditional_cov_sample,
    config_hash,
    deviation_moments,
    forward_sample,
    is_shallow_example,
    limit_kernel,
    load_moment_cache,
    moment_tensor,
    save_moment_cache,
    shallow_example_config,
    shallow_example_inputs,
    shallow_relu_moment_tensor,
    shallow_relu_moments,
)
from .streams import ChunkedStream
from .cli import main

__all__ = [
    "ChunkedStream",
    "CosProbeResult",
    "Dataset",
    "DegenerateNormalizer",
    "DeviationMoments",
    "EdgeworthModel",
    "GaussianLikelihood",
    "GridSpec",
    "HermiteCoeffs",
    "InputSet",
    "LimitKernel",
    "MomentEntry",
    "MomentTensor",
    "NetworkConfig",
    "NotPositiveDefinite",
    "PosteriorClosedForm",
    "PredictiveResult",
    "QuadratureRule",
    "RateFit",
    "SpdMatrix",
    "TvReport",
    "TvScanRow",
    "arc_cosine_relu_expectation",
    "as_spd",
    "bivariate_gaussian_expectation",
    "block_admissible",
    "block_tuples",
    "config_hash",
    "conditional_cov_sample",
    "cos_probe",
    "count_A",
    "count_S",
    "counts_of",
    "density_taylor_term",
    "deviation_moments",
    "edgeworth_density",
    "edgeworth_density_grid",
    "edgeworth_lower_bound",
    "edgeworth_upper_bound",
    "enumerate_A",
    "enumerate_S",
    "fit_rate",
    "forward_sample",
    "gaussian_density",
    "hermite_coeffs",
    "hermite_eval",
    "hermite_product_moment_centered",
    "hermite_product_moment_shifted",
    "hermite_table",
    "is_shallow_example",
    "limit_kernel",
    "load_moment_cache",
    "main",
    "moment_tensor",
    "negative_mass_fraction",
    "normalizing_constant",
    "posterior_closed_form",
    "posterior_curve",
    "posterior_density_edgeworth",
    "posterior_tv_scan",
    "predictive_distribution",
    "prior_tv_scan",
    "save_moment_cache",
    "shallow_curve_coefficients",
    "shallow_example_config",
    "shallow_example_inputs",
    "shallow_exact_curve",
    "shallow_exact_h8_coefficient",
    "shallow_relu_density",
    "shallow_relu_moment_tensor",
    "shallow_relu_moments",
    "spd_sqrt",
    "total_mass",
    "true_density",
    "true_density_grid",
    "tv_on_grid",
    "__version__",
]
