"""Differentially private k-sparse vectors via Approximate Laplace Projection."""

from .alp_core import (
    AlpParams,
    Embedding,
    EstimationTrace,
    alp1_estimate,
    alp1_project,
    alp_estimate,
    alp_estimate_many,
    alp_project,
)
from .combined import (
    CombinedRepresentation,
    SignedRepresentation,
    SignedSparseVector,
    combined_estimate,
    combined_estimate_many,
    combined_project,
    signed_estimate,
    signed_project,
)
from .errors import AlpError, ConfigurationError, DomainError, FormatError, ResourceError
from .primitives import (
    HashFunctionSeq,
    PrivacyBudget,
    RandomnessStream,
    SparseVector,
    hash_eval,
    laplace_mechanism,
    laplace_sample,
    random_round,
    randomized_response,
)
from .threshold import NoisySparseVector, ThresholdParams, threshold_approx, threshold_pure

__version__ = "0.1.0"
