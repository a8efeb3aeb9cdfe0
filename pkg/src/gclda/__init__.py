"""Temporal topic modeling with endogenous drift and exogenous covariates."""

__version__ = "0.1.0"

from .corpus import (
    Corpus,
    RawDocument,
    Vocabulary,
    build_corpus,
    build_vocabulary,
    bucketize,
    load_corpus,
    save_corpus,
    standardize_covariates,
    tokenize,
)
from .errors import GcldaError, InputError, InvariantError
from .evaluation import (
    EvalReport,
    correlation_scores,
    left_to_right_loglik,
    perplexity,
    point_estimates,
)
from .generator import GeneratorSpec, GroundTruth, generate, held_out_split
from .model import (
    ChainState,
    CountMatrices,
    ModelConfig,
    PosteriorSummary,
    log_joint,
    recompute_counts,
)
from .sampler import (
    Chain,
    SamplerDiagnostics,
    initialize_state,
    metropolis_step,
    run_chain,
    update_alpha,
    update_eta,
    update_lambda,
    update_pi_tilde,
)

__all__ = [
    "Chain",
    "ChainState",
    "Corpus",
    "CountMatrices",
    "EvalReport",
    "GcldaError",
    "GeneratorSpec",
    "GroundTruth",
    "InputError",
    "InvariantError",
    "ModelConfig",
    "PosteriorSummary",
    "RawDocument",
    "SamplerDiagnostics",
    "Vocabulary",
    "build_corpus",
    "build_vocabulary",
    "bucketize",
    "correlation_scores",
    "generate",
    "held_out_split",
    "initialize_state",
    "left_to_right_loglik",
    "load_corpus",
    "log_joint",
    "metropolis_step",
    "perplexity",
    "point_estimates",
    "recompute_counts",
    "run_chain",
    "save_corpus",
    "standardize_covariates",
    "tokenize",
    "update_alpha",
    "update_eta",
    "update_lambda",
    "update_pi_tilde",
]
