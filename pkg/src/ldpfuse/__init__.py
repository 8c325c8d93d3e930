"""Fuse privately perturbed numerical data from many services into one estimate.

Several services each collect a perturbed version of the same users'
values under epsilon-LDP, possibly with different mechanisms and budgets.
This package simulates such collections and fuses them: unbiased and
posterior-weighted population means, and an EM-fitted histogram of the
value distribution.  See the README for the CLI harness.
"""

from .buckets import (
    AtomBuckets,
    BucketGrid,
    ConditionalMatrix,
    LaplaceLikelihood,
    UnsupportedMechanismError,
    build_output_grid,
    conditional_matrix,
    laplace_bucket_prob,
    laplace_interval_mass,
    likelihood_models,
)
from .config import ConfigError, ExperimentConfig, load_config, validate_config
from .data import Collection, Stratum, UserObservations, as_collection
from .distribution import (
    EmConfig,
    EmDivergedError,
    EmResult,
    GroupedCounts,
    GroupStratum,
    HistogramEstimate,
    ImpossibleObservationError,
    em_estimate,
    estimate_histogram,
    group_users,
    histogram_mean,
)
from .mean import (
    Posterior,
    UwaResult,
    bayesian_update,
    minimum_variance_weights,
    posterior_variance,
    unbiased_average,
    uwa,
)
from .mechanisms import (
    CANONICAL_DOMAIN,
    DomainError,
    LaplaceMechanism,
    Mechanism,
    PiecewiseMechanism,
    SquareWaveMechanism,
    StochasticRounding,
    make_mechanism,
)
from .metrics import TrialSeries, js_divergence, kl_divergence, mse
from .runner import RunResult, run_experiment
from .simulate import (
    IngestReport,
    ParticipationGroup,
    Population,
    ServicePlan,
    describe_datasets,
    generate_synthetic,
    ingest_csv,
    simulate_collection,
)

__version__ = "0.1.0"

__all__ = [
    "AtomBuckets",
    "BucketGrid",
    "CANONICAL_DOMAIN",
    "Collection",
    "ConditionalMatrix",
    "ConfigError",
    "DomainError",
    "EmConfig",
    "EmDivergedError",
    "EmResult",
    "ExperimentConfig",
    "GroupStratum",
    "GroupedCounts",
    "HistogramEstimate",
    "ImpossibleObservationError",
    "IngestReport",
    "LaplaceLikelihood",
    "LaplaceMechanism",
    "Mechanism",
    "ParticipationGroup",
    "PiecewiseMechanism",
    "Population",
    "Posterior",
    "RunResult",
    "ServicePlan",
    "SquareWaveMechanism",
    "StochasticRounding",
    "Stratum",
    "TrialSeries",
    "UnsupportedMechanismError",
    "UserObservations",
    "UwaResult",
    "as_collection",
    "bayesian_update",
    "build_output_grid",
    "conditional_matrix",
    "em_estimate",
    "estimate_histogram",
    "describe_datasets",
    "generate_synthetic",
    "group_users",
    "histogram_mean",
    "ingest_csv",
    "js_divergence",
    "kl_divergence",
    "laplace_bucket_prob",
    "laplace_interval_mass",
    "likelihood_models",
    "load_config",
    "make_mechanism",
    "minimum_variance_weights",
    "mse",
    "posterior_variance",
    "run_experiment",
    "simulate_collection",
    "unbiased_average",
    "uwa",
    "validate_config",
]
