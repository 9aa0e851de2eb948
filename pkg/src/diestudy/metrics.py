"""Accuracy statistics and numismatic summaries for predicted partitions.

All metrics are computed from the contingency table of true class labels
against predicted cluster labels and are invariant under relabeling of either
side. Per-class sensitivity measures the largest correctly grouped fraction
of a class; per-class FDR measures contamination of the class's clusters by
foreign items.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np


def _contingency(l_labels, c_labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    l_arr = np.asarray(l_labels)
    c_arr = np.asarray(c_labels)
    if l_arr.shape != c_arr.shape or l_arr.ndim != 1 or len(l_arr) == 0:
        raise ValueError("label sequences must be non-empty and of equal length")
    l_vals, l_idx = np.unique(l_arr, return_inverse=True)
    c_vals, c_idx = np.unique(c_arr, return_inverse=True)
    table = np.zeros((len(l_vals), len(c_vals)), dtype=np.int64)
    np.add.at(table, (l_idx, c_idx), 1)
    return table, l_vals, c_vals


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def nmi(l_labels, c_labels) -> float:
    """Normalized mutual information with geometric-mean normalization.

    Natural-log entropies; two constant labelings score 1, and a constant
    labeling against a non-constant one scores 0.
    """
    table, _, _ = _contingency(l_labels, c_labels)
    n = table.sum()
    h_l = _entropy(table.sum(axis=1))
    h_c = _entropy(table.sum(axis=0))
    if h_l == 0.0 and h_c == 0.0:
        return 1.0
    if h_l == 0.0 or h_c == 0.0:
        return 0.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(np.clip(mi / np.sqrt(h_l * h_c), 0.0, 1.0))


def ari(l_labels, c_labels) -> float:
    """Adjusted Rand index from pair counts (chance-corrected, in [-1, 1])."""
    table, _, _ = _contingency(l_labels, c_labels)
    n = table.sum()

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table.astype(np.float64)).sum()
    sum_a = comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_b = comb2(table.sum(axis=0).astype(np.float64)).sum()
    total = comb2(float(n))
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0  # both labelings trivial (all-singletons or single block)
    return float((sum_ij - expected) / (max_index - expected))


def class_sensitivity(l_labels, c_labels, class_id) -> float:
    """Largest fraction of the class recovered inside a single cluster."""
    l_arr = np.asarray(l_labels)
    c_arr = np.asarray(c_labels)
    in_class = l_arr == class_id
    size = int(in_class.sum())
    if size == 0:
        raise ValueError(f"class {class_id!r} not present")
    counts = Counter(c_arr[in_class].tolist())
    return max(counts.values()) / size


def class_fdr(l_labels, c_labels, class_id) -> float:
    """Contamination rate of the clusters touched by the class.

    w / (class size + w), where w counts items outside the class that share a
    cluster with any class item. A mixed cluster therefore contributes to the
    FDR of every class inside it.
    """
    l_arr = np.asarray(l_labels)
    c_arr = np.asarray(c_labels)
    in_class = l_arr == class_id
    size = int(in_class.sum())
    if size == 0:
        raise ValueError(f"class {class_id!r} not present")
    touched = np.unique(c_arr[in_class])
    foreign = int((np.isin(c_arr, touched) & ~in_class).sum())
    return foreign / (size + foreign)


@dataclass
class ClassReport:
    class_id: object
    size: int
    sensitivity: float
    fdr: float


def per_class_report(l_labels, c_labels) -> list[ClassReport]:
    reports = []
    for class_id in np.unique(np.asarray(l_labels)):
        reports.append(
            ClassReport(
                class_id=class_id,
                size=int((np.asarray(l_labels) == class_id).sum()),
                sensitivity=class_sensitivity(l_labels, c_labels, class_id),
                fdr=class_fdr(l_labels, c_labels, class_id),
            )
        )
    return reports


def weighted_summary(reports: list[ClassReport]) -> tuple[float, float]:
    """Class-size-weighted average sensitivity and FDR."""
    if not reports:
        raise ValueError("no class reports")
    weights = np.array([r.size for r in reports], dtype=np.float64)
    sens = np.array([r.sensitivity for r in reports])
    fdr = np.array([r.fdr for r in reports])
    return float((weights * sens).sum() / weights.sum()), float(
        (weights * fdr).sum() / weights.sum()
    )


@dataclass
class VerificationBudget:
    max_comparisons: int  # worst case for validating + merging k_tilde clusters
    oracle_comparisons: int  # validating an already perfect prediction
    brute_force: int | None = None  # all-pairs comparisons for n images
    reduction: float | None = None  # 1 - max_comparisons / brute_force


def verification_bound(k: int, k_tilde: int, n_images: int | None = None) -> VerificationBudget:
    """Worst-case comparison count to verify and repair k_tilde pure clusters.

    ``2*k*k_tilde - k^2 - k_tilde*(k_tilde+1)/2`` (always an integer), along
    with the oracle bound k*(k-1)/2, and the reduction against comparing all
    n_images pairwise when ``n_images`` is given. The worst-case argument
    behind the formula assumes k_tilde <= 3k - 1 (each class over-split into
    at most a couple of fragments); beyond that regime the value drops below
    the oracle bound and is no longer meaningful.
    """
    if k < 1 or k_tilde < k:
        raise ValueError("need k_tilde >= k >= 1")
    max_comparisons = 2 * k * k_tilde - k * k - (k_tilde * (k_tilde + 1)) // 2
    oracle = k * (k - 1) // 2
    brute = reduction = None
    if n_images is not None:
        brute = n_images * (n_images - 1) // 2
        reduction = 1.0 - max_comparisons / brute if brute else 0.0
    return VerificationBudget(
        max_comparisons=max_comparisons,
        oracle_comparisons=oracle,
        brute_force=brute,
        reduction=reduction,
    )


def frequency_chart(partition) -> dict[int, int]:
    """Histogram {coins per die: number of dies} of the cluster sizes."""
    labels = partition.labels if hasattr(partition, "labels") else np.asarray(partition)
    if len(labels) == 0:
        raise ValueError("empty partition")
    sizes = Counter(Counter(np.asarray(labels).tolist()).values())
    return dict(sorted(sizes.items()))


@dataclass
class DieLinkGraph:
    """Bipartite multigraph of obverse and reverse dies co-occurring on coins."""

    edges: dict[tuple[int, int], int]  # (obverse cluster, reverse cluster) -> coin count
    component_sizes: list[int]

    @property
    def n_components(self) -> int:
        return len(self.component_sizes)


def die_link_graph(
    obv_ids: list[str],
    obv_labels,
    rev_ids: list[str],
    rev_labels,
    coin_records: list[tuple[str, str, str]],
) -> DieLinkGraph:
    """Link obverse and reverse dies through the coins that carry both.

    ``coin_records`` holds (coin id, obverse image id, reverse image id);
    dangling image references raise.
    """
    obv_map = {img: int(lab) for img, lab in zip(obv_ids, obv_labels)}
    rev_map = {img: int(lab) for img, lab in zip(rev_ids, rev_labels)}
    edges: dict[tuple[int, int], int] = {}
    for coin_id, obv_img, rev_img in coin_records:
        if obv_img not in obv_map:
            raise KeyError(f"coin {coin_id}: unknown obverse image {obv_img!r}")
        if rev_img not in rev_map:
            raise KeyError(f"coin {coin_id}: unknown reverse image {rev_img!r}")
        key = (obv_map[obv_img], rev_map[rev_img])
        edges[key] = edges.get(key, 0) + 1

    # connected components over the bipartite vertex set
    parent: dict[tuple[str, int], tuple[str, int]] = {}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for obv_c, rev_c in edges:
        for v in (("o", obv_c), ("r", rev_c)):
            parent.setdefault(v, v)
        ra, rb = find(("o", obv_c)), find(("r", rev_c))
        if ra != rb:
            parent[ra] = rb
    comp_sizes: Counter = Counter(find(v) for v in parent)
    return DieLinkGraph(edges=edges, component_sizes=sorted(comp_sizes.values(), reverse=True))


def die_link_edge_csv(graph: DieLinkGraph) -> str:
    lines = ["obverse_die,reverse_die,coins"]
    for (o, r), count in sorted(graph.edges.items()):
        lines.append(f"{o},{r},{count}")
    return "\n".join(lines) + "\n"


def die_link_dot(graph: DieLinkGraph) -> str:
    """GraphViz DOT export for external visualization."""
    lines = ["graph die_links {"]
    obv = sorted({o for o, _ in graph.edges})
    rev = sorted({r for _, r in graph.edges})
    for o in obv:
        lines.append(f'  "obv_{o}" [shape=circle];')
    for r in rev:
        lines.append(f'  "rev_{r}" [shape=triangle];')
    for (o, r), count in sorted(graph.edges.items()):
        lines.append(f'  "obv_{o}" -- "rev_{r}" [label="{count}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
