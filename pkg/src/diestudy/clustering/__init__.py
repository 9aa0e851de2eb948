"""Bayesian distance microclustering: k-medoids init, chaperones MCMC, SALSO."""

from .kmedoids import enforce_size_cap, kmedoids_init
from .model import (
    LikelihoodParams,
    Partition,
    PriorConfig,
    estimate_likelihood_params,
    gamma_logpdf,
    log_partition_posterior,
    pair_log_weights,
    size_log_pmf,
)
from .salso import binder_loss, salso_point_estimate
from .sampler import (
    ChainState,
    ChaperonesSampler,
    CoClusteringMatrix,
    McmcSummary,
    chaperones_step,
    run_mcmc,
)

__all__ = [
    "ChainState",
    "ChaperonesSampler",
    "CoClusteringMatrix",
    "LikelihoodParams",
    "McmcSummary",
    "Partition",
    "PriorConfig",
    "binder_loss",
    "chaperones_step",
    "enforce_size_cap",
    "estimate_likelihood_params",
    "gamma_logpdf",
    "kmedoids_init",
    "log_partition_posterior",
    "pair_log_weights",
    "run_mcmc",
    "salso_point_estimate",
    "size_log_pmf",
]
