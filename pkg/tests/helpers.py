"""Shared test utilities: tiny distance-matrix factory and partition enumeration."""

import numpy as np
from scipy.special import logsumexp

from diestudy.clustering import Partition, log_partition_posterior
from diestudy.matching import DistanceMatrix


def dm_from_square(square: np.ndarray, ids=None) -> DistanceMatrix:
    square = np.asarray(square, dtype=np.float64)
    n = square.shape[0]
    iu, ju = np.triu_indices(n, 1)
    d = square[iu, ju]
    return DistanceMatrix(
        ids=ids or [f"item{k}" for k in range(n)],
        d=d,
        n_matches=np.ones(len(d), dtype=np.int64),
        p=d.copy(),
        rescale_params=(0.0, 1.0, 0.0, 1.0),
    )


def two_block_square(n: int, within=0.1, between=0.9, noise=0.0, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    half = n // 2
    labels = np.array([0] * half + [1] * (n - half))
    sq = np.where(labels[:, None] == labels[None, :], within, between).astype(float)
    if noise:
        jitter = rng.uniform(-noise, noise, (n, n))
        jitter = (jitter + jitter.T) / 2
        sq = np.clip(sq + jitter, 1e-3, 2.0)
    np.fill_diagonal(sq, 0.0)
    return sq


def set_partitions(n: int):
    """All partitions of n items as canonical label tuples (labels 0..K-1,
    first appearance order). Bell(n) of them."""

    def rec(i, labels, k):
        if i == n:
            yield tuple(labels)
            return
        for c in range(k + 1):
            labels.append(c)
            yield from rec(i + 1, labels, k + (1 if c == k else 0))
            labels.pop()

    yield from rec(0, [], 0)


def canonical_tuple(labels) -> tuple:
    mapping = {}
    out = []
    for lab in labels:
        lab = int(lab)
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out.append(mapping[lab])
    return tuple(out)


def exact_partition_posterior(dm, prior, like, max_size=None):
    """Normalized posterior over all partitions (optionally capped)."""
    n = dm.n
    parts = []
    logps = []
    for p in set_partitions(n):
        sizes = np.bincount(np.array(p))
        if max_size is not None and sizes.max() > max_size:
            continue
        parts.append(p)
        logps.append(
            log_partition_posterior(dm, Partition(np.array(p) + 1), prior, like)
        )
    logps = np.array(logps)
    probs = np.exp(logps - logsumexp(logps))
    return parts, probs


def exact_coclustering(parts, probs, n: int) -> np.ndarray:
    """Condensed exact co-clustering probabilities from an enumerated posterior."""
    iu, ju = np.triu_indices(n, 1)
    q = np.zeros(len(iu))
    for p, prob in zip(parts, probs):
        arr = np.array(p)
        q += prob * (arr[iu] == arr[ju])
    return q
