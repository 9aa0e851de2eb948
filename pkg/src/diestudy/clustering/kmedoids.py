"""Deterministic k-medoids (PAM build + alternating refinement)."""

from __future__ import annotations

import numpy as np

from .model import Partition


def kmedoids_init(dm, k: int, max_iters: int = 100) -> Partition:
    """Cluster the distance matrix around k medoids.

    The build phase greedily seeds medoids (first the point with minimal total
    distance, then whichever candidate reduces the assignment cost most, ties
    to the smallest index), after which assignment and medoid-update steps
    alternate to a fixed point. Every cluster keeps its medoid, so none is
    empty. Fully deterministic.
    """
    square = dm if isinstance(dm, np.ndarray) else dm.square()
    n = square.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"k must be in [1, {n}]")

    medoids = [int(np.argmin(square.sum(axis=1)))]
    nearest = square[medoids[0]].copy()
    while len(medoids) < k:
        reductions = np.maximum(nearest[None, :] - square, 0.0).sum(axis=1)
        reductions[medoids] = -1.0
        cand = int(np.argmax(reductions))
        medoids.append(cand)
        nearest = np.minimum(nearest, square[cand])

    medoids = sorted(medoids)
    for _ in range(max_iters):
        med_arr = np.array(medoids)
        assign = np.argmin(square[:, med_arr], axis=1)
        assign[med_arr] = np.arange(k)  # medoids anchor their own cluster
        new_medoids = []
        for c in range(k):
            members = np.flatnonzero(assign == c)
            costs = square[np.ix_(members, members)].sum(axis=1)
            new_medoids.append(int(members[np.argmin(costs)]))
        new_medoids = sorted(new_medoids)
        if new_medoids == medoids:
            break
        medoids = new_medoids

    med_arr = np.array(medoids)
    assign = np.argmin(square[:, med_arr], axis=1)
    assign[med_arr] = np.arange(k)
    return Partition(labels=assign + 1)


def enforce_size_cap(partition: Partition, cap: int) -> Partition:
    """Split any cluster above the cap into consecutive chunks of at most cap."""
    labels = partition.labels.copy()
    next_id = int(labels.max()) + 1
    for lab, members in partition.clusters().items():
        if len(members) <= cap:
            continue
        for start in range(cap, len(members), cap):
            for idx in members[start : start + cap]:
                labels[idx] = next_id
            next_id += 1
    return Partition(labels=labels)
