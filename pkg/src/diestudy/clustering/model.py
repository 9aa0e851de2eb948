"""Partition model: cluster-size prior and distance likelihood.

The posterior over partitions combines a size prior that keeps clusters small
(sizes drawn i.i.d. from a shifted negative binomial, so the expected cluster
size stays fixed as the dataset grows) with a likelihood placed directly on
the pairwise distances: within-cluster distances follow a "cohesion" Gamma
density concentrated near zero, between-cluster distances a "repulsion" Gamma
with a larger mean. Only the ratio of the two densities matters for
comparisons, which makes incremental updates cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import nbinom, poisson

D_FLOOR = 1e-9  # distances are clamped away from zero inside log densities
SHAPE_CAP = 1e4  # moment-matched Gamma shape for (near) zero-variance samples


@dataclass
class Partition:
    """Cluster-label assignment for N items."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or len(self.labels) == 0:
            raise ValueError("labels must be a non-empty 1-D array")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def n_clusters(self) -> int:
        return len(np.unique(self.labels))

    def cluster_sizes(self) -> np.ndarray:
        return np.unique(self.labels, return_counts=True)[1]

    def clusters(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for idx, lab in enumerate(self.labels):
            out.setdefault(int(lab), []).append(idx)
        return out

    def canonical(self) -> np.ndarray:
        """Labels renumbered 1..K in order of first appearance."""
        mapping: dict[int, int] = {}
        out = np.empty_like(self.labels)
        for idx, lab in enumerate(self.labels):
            if int(lab) not in mapping:
                mapping[int(lab)] = len(mapping) + 1
            out[idx] = mapping[int(lab)]
        return out


@dataclass
class PriorConfig:
    size_mean: float = 5.0
    size_variance: float = 15.0
    max_cluster_size: int = 25

    def __post_init__(self):
        if self.size_mean < 1:
            raise ValueError("size_mean must be at least 1")
        if self.size_variance < self.size_mean - 1:
            raise ValueError("size_variance must be at least size_mean - 1")
        if self.max_cluster_size < 1:
            raise ValueError("max_cluster_size must be at least 1")


@dataclass
class LikelihoodParams:
    cohesion_shape: float
    cohesion_rate: float
    repulsion_shape: float
    repulsion_rate: float

    def __post_init__(self):
        for v in (self.cohesion_shape, self.cohesion_rate, self.repulsion_shape, self.repulsion_rate):
            if v <= 0:
                raise ValueError("likelihood parameters must be strictly positive")
        if self.cohesion_mean >= self.repulsion_mean:
            raise ValueError("cohesion mean must be below repulsion mean")

    @property
    def cohesion_mean(self) -> float:
        return self.cohesion_shape / self.cohesion_rate

    @property
    def repulsion_mean(self) -> float:
        return self.repulsion_shape / self.repulsion_rate


def size_log_pmf(sizes, prior: PriorConfig) -> np.ndarray:
    """Log pmf of the shifted negative binomial at the given cluster sizes.

    Support {1, 2, ...} with mean ``size_mean`` and variance ``size_variance``;
    the variance-equals-mean-minus-one boundary degenerates to a shifted
    Poisson, and mean 1 to a point mass at size 1.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if (sizes < 1).any():
        raise ValueError("cluster sizes must be at least 1")
    m = prior.size_mean - 1.0
    v = prior.size_variance
    k = sizes - 1
    if m == 0.0:
        return np.where(k == 0, 0.0, -np.inf)
    if v <= m * (1 + 1e-12):
        return poisson.logpmf(k, m)
    p = m / v
    r = m * m / (v - m)
    return nbinom.logpmf(k, r, p)


def gamma_logpdf(d, shape: float, rate: float) -> np.ndarray:
    d = np.maximum(np.asarray(d, dtype=np.float64), D_FLOOR)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(d) - rate * d


def pair_log_weights(d: np.ndarray, like: LikelihoodParams) -> np.ndarray:
    """Per-pair log cohesion/repulsion density ratio (condensed layout)."""
    return gamma_logpdf(d, like.cohesion_shape, like.cohesion_rate) - gamma_logpdf(
        d, like.repulsion_shape, like.repulsion_rate
    )


def log_partition_posterior(dm, partition: Partition, prior: PriorConfig, like: LikelihoodParams) -> float:
    """Unnormalized log posterior of a partition given the distance matrix.

    Sum of the size prior over clusters, the cohesion log density over
    within-cluster pairs, and the repulsion log density over between-cluster
    pairs. Invariant under relabeling of clusters.
    """
    d = np.asarray(dm.d, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("distance matrix contains non-finite values")
    n = dm.n
    if partition.n != n:
        raise ValueError("partition size does not match the distance matrix")
    iu, ju = np.triu_indices(n, 1)
    same = partition.labels[iu] == partition.labels[ju]
    log_coh = gamma_logpdf(d, like.cohesion_shape, like.cohesion_rate)
    log_rep = gamma_logpdf(d, like.repulsion_shape, like.repulsion_rate)
    loglik = float(log_coh[same].sum() + log_rep[~same].sum())
    logprior = float(size_log_pmf(partition.cluster_sizes(), prior).sum())
    return logprior + loglik


def _fit_gamma(samples: np.ndarray) -> tuple[float, float]:
    mean = float(max(samples.mean(), D_FLOOR))
    var = float(samples.var())
    shape = SHAPE_CAP if var <= 0 else min(mean * mean / var, SHAPE_CAP)
    return shape, shape / mean


def estimate_likelihood_params(dm, init: Partition) -> LikelihoodParams:
    """Moment-match Gamma densities to the initial within/between distances.

    If the initial partition has no within-cluster (or no between-cluster)
    pairs the defaults are data-driven quantiles: cohesion mean at the 10th
    percentile of all distances, repulsion mean at their overall mean, both
    with shape 2. Raises if the fitted cohesion mean is not below the
    repulsion mean (the populations are swapped or indistinguishable).
    """
    d = np.asarray(dm.d, dtype=np.float64)
    n = dm.n
    iu, ju = np.triu_indices(n, 1)
    same = init.labels[iu] == init.labels[ju]
    within = d[same]
    between = d[~same]
    if len(within) == 0 or len(between) == 0:
        coh_mean = max(float(np.percentile(d, 10)), D_FLOOR)
        rep_mean = max(float(d.mean()), 2 * coh_mean)
        return LikelihoodParams(2.0, 2.0 / coh_mean, 2.0, 2.0 / rep_mean)
    coh_shape, coh_rate = _fit_gamma(within)
    rep_shape, rep_rate = _fit_gamma(between)
    if coh_shape / coh_rate >= rep_shape / rep_rate:
        raise ValueError(
            "within-cluster distances of the initial partition are not smaller "
            "on average than between-cluster distances"
        )
    return LikelihoodParams(coh_shape, coh_rate, rep_shape, rep_rate)
