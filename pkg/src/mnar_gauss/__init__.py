"""Gaussian mean and covariance estimation under known missing-not-at-random censoring."""

__version__ = "0.1.0"

from .errors import (
    AnchorViolated,
    AssumptionViolation,
    BlockStarved,
    EmptyFeasible,
    GridTooCoarse,
    InsufficientStream,
    InvalidBeta,
    MassTooLow,
    MnarGaussError,
    NoConvergence,
    NonConvergent,
    NotPositiveDefinite,
    PairStarved,
    SchemaError,
    SingularBlock,
)
from .gaussian import GaussianParams, condition_gaussian, mahalanobis_norm, tv_distance_mc
from .linear_threshold import (
    DescentConfig,
    IterateTrace,
    initialize,
    missing_descent,
    project_onto_L,
    project_to_domain,
    sample_gradient,
)
from .missingness import (
    LinearThresholdModel,
    Observation,
    ObservationTable,
    SelfCensoringModel,
    audit_alpha_pair,
    audit_alpha_subset,
    audit_anchoring,
    audit_assumptions,
    membership_polytope,
    simulate,
)
from .self_censoring import SelfCensoringConfig, evaluate_estimate, fit_self_censoring
from .truncated import TruncatedFitConfig, TruncationSet, sample_truncated, truncated_fit
