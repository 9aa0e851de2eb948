"""Greedy point-estimate partition from a co-clustering matrix.

Minimizes the Binder loss sum_{i<j} |1[same cluster] - q_ij|. Up to a
constant this equals the sum of (1 - 2 q_ij) over within-cluster pairs, so
allocation decisions only need the pair penalties of one item against each
candidate cluster. Items are allocated sequentially in a random order, then
single-item reallocation sweeps run to a fixed point; the best of several
random orders is returned.
"""

from __future__ import annotations

import numpy as np

from .model import Partition
from .sampler import CoClusteringMatrix


def _binder_within(penalty: np.ndarray, clusters: list[list[int]]) -> float:
    total = 0.0
    for members in clusters:
        if len(members) > 1:
            total += penalty[np.ix_(members, members)].sum() / 2.0
    return total


def binder_loss(q: CoClusteringMatrix, partition: Partition) -> float:
    """Exact Binder loss of a partition against the co-clustering matrix."""
    iu, ju = np.triu_indices(q.n, 1)
    same = partition.labels[iu] == partition.labels[ju]
    return float(np.where(same, 1.0 - q.q, q.q).sum())


def salso_point_estimate(
    q: CoClusteringMatrix, n_restarts: int = 16, seed: int = 0
) -> Partition:
    """Best sequential-allocation partition over ``n_restarts`` item orders.

    The sweep phase only ever applies strictly improving single-item moves,
    so the loss is non-increasing within a restart.
    """
    n = q.n
    if n == 1:
        return Partition(labels=np.array([1]))
    penalty = 1.0 - 2.0 * q.square()
    np.fill_diagonal(penalty, 0.0)
    rng = np.random.default_rng(seed)

    best_loss = np.inf
    best_labels: np.ndarray | None = None
    for _ in range(max(n_restarts, 1)):
        order = rng.permutation(n)
        clusters: list[list[int]] = []
        for u in order:
            u = int(u)
            costs = [penalty[u, members].sum() for members in clusters]
            if costs and min(costs) < 0.0:
                clusters[int(np.argmin(costs))].append(u)
            else:
                clusters.append([u])

        labels = np.empty(n, dtype=np.int64)
        for cid, members in enumerate(clusters):
            labels[members] = cid

        # local sweeps: move one item at a time while the loss strictly drops
        for _ in range(200):
            moved = False
            for u in range(n):
                current = int(labels[u])
                cost_here = penalty[u][labels == current].sum()  # penalty[u, u] = 0
                best_cost, best_c = 0.0, -1  # -1 encodes a fresh singleton
                for c in np.unique(labels):
                    if c == current:
                        continue
                    cost_c = penalty[u][labels == c].sum()
                    if cost_c < best_cost - 1e-12:
                        best_cost, best_c = cost_c, int(c)
                if best_cost < cost_here - 1e-12:
                    labels[u] = best_c if best_c >= 0 else int(labels.max()) + 1
                    moved = True
            if not moved:
                break

        part = Partition(labels=labels)
        loss = binder_loss(q, part)
        if loss < best_loss - 1e-12:
            best_loss = loss
            best_labels = part.canonical()
    assert best_labels is not None
    return Partition(labels=best_labels)
