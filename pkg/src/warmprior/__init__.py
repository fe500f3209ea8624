"""Warm-started multi-objective pipeline search from a store of past experiences."""

from .space import (
    Categorical,
    Configuration,
    Continuous,
    SamplerState,
    SearchSpace,
    apply_negative_update,
    apply_positive_update,
    empirical_distribution,
    init_uniform,
    method_marginal,
    parse_space,
    sample,
)
from .store import Experience, ExperienceStore, Failure, FitnessVector, label
from .metafeatures import MetaFeatureVector, SystemProfile
from .prior import PriorParams, build_prior, knn_prior, stratify_priors, tv_distance
from .optimizer import Budget, SearchTrace, run_search

__version__ = "0.1.0"
