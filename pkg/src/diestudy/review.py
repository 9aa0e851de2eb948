"""Event-sourced verification session over a predicted partition.

The reviewer first inspects clusters and splits out wrongly grouped images,
then works through representative comparisons to merge clusters the pipeline
kept apart. State is the fold of the operation log over the base partition;
replaying the log always reproduces the current labels. Merges and explicit
"different" verdicts each count as one visual comparison; the session tracks
the count against the worst-case budget for the current cluster structure.

Op shapes (JSON dicts):

    {"op": "split", "cluster": id, "groups": [[image_id, ...], ...]}
    {"op": "merge", "clusters": [id, id, ...]}
    {"op": "distinct", "a": id, "b": id}
    {"op": "mark_representative", "cluster": id, "image": image_id}
    {"op": "validate", "cluster": id}
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .clustering import Partition
from .matching import DistanceMatrix
from .metrics import verification_bound
from .synth import GRADES


def apply_review_ops(base: Partition, ops: list[dict], ids: list[str] | None = None) -> Partition:
    """Deterministic fold of split/merge operations over the base labels.

    Splits must cover the cluster exactly with at least two disjoint groups;
    the first group keeps the cluster id, later groups get fresh ids. Merges
    unify clusters under the smallest participating id. Status-only ops
    (distinct / mark_representative / validate) do not change labels.
    """
    labels = base.labels.copy()
    if ids is None:
        ids = [str(k) for k in range(len(labels))]
    index_of = {image_id: k for k, image_id in enumerate(ids)}
    next_id = int(labels.max()) + 1

    for op in ops:
        kind = op.get("op")
        if kind == "split":
            cid = int(op["cluster"])
            members = [ids[k] for k in np.flatnonzero(labels == cid)]
            if not members:
                raise ValueError(f"split: no cluster {cid}")
            groups = op["groups"]
            if len(groups) < 2:
                raise ValueError("split needs at least two groups")
            flat = [img for group in groups for img in group]
            if sorted(flat) != sorted(members) or len(set(flat)) != len(flat):
                raise ValueError("split groups must cover the cluster exactly")
            for group in groups[1:]:
                for img in group:
                    labels[index_of[img]] = next_id
                next_id += 1
        elif kind == "merge":
            cids = [int(c) for c in op["clusters"]]
            if len(cids) < 2 or len(set(cids)) != len(cids):
                raise ValueError("merge needs at least two distinct clusters")
            present = set(labels.tolist())
            for c in cids:
                if c not in present:
                    raise ValueError(f"merge: no cluster {c}")
            target = min(cids)
            labels[np.isin(labels, cids)] = target
        elif kind in ("distinct", "mark_representative", "validate"):
            pass
        else:
            raise ValueError(f"unknown op {kind!r}")
    return Partition(labels=labels)


_GRADE_RANK = {name: rank for rank, name in enumerate(GRADES)}  # 0 = best preserved


@dataclass
class ClusterSummary:
    cluster_id: int
    members: list[str]
    representative: str
    status: str
    mean_within_d: float | None


@dataclass
class ReviewSession:
    """Mutable verification state; all mutation goes through ``apply``."""

    ids: list[str]
    base: Partition
    distances: DistanceMatrix | None = None
    grades: dict[str, str] = field(default_factory=dict)
    ops: list[dict] = field(default_factory=list)
    version: int = 0
    comparisons_used: int = 0

    def __post_init__(self):
        if len(self.ids) != self.base.n:
            raise ValueError("ids and base partition length mismatch")
        self._index_of = {image_id: k for k, image_id in enumerate(self.ids)}
        self._labels = self.base.labels.copy()
        self._distinct: set[frozenset[int]] = set()
        self._validated: set[int] = set()
        self._marked_rep: dict[int, str] = {}
        self._k_tilde = self.base.n_clusters

    # -- state derivation --------------------------------------------------------

    def current_partition(self) -> Partition:
        return Partition(labels=self._labels.copy())

    def replay(self) -> Partition:
        """Independent fold of the op log (the source of truth)."""
        return apply_review_ops(self.base, self.ops, self.ids)

    def cluster_ids(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self._labels))

    def members(self, cluster_id: int) -> list[str]:
        return [self.ids[k] for k in np.flatnonzero(self._labels == cluster_id)]

    def _badness(self, image_id: str) -> int:
        return _GRADE_RANK.get(self.grades.get(image_id, ""), 0)

    def representative(self, cluster_id: int) -> str:
        if cluster_id in self._marked_rep:
            marked = self._marked_rep[cluster_id]
            if marked in self.members(cluster_id):
                return marked
        members = self.members(cluster_id)
        return min(members, key=lambda img: (self._badness(img), img))

    def mean_within_d(self, cluster_id: int) -> float | None:
        if self.distances is None:
            return None
        members = [self._index_of[m] for m in self.members(cluster_id)]
        if len(members) < 2:
            return None
        vals = [
            self.distances.get(a, b)
            for i, a in enumerate(members)
            for b in members[i + 1 :]
        ]
        return float(np.mean(vals))

    def cluster_summaries(self, sort: str = "size") -> list[ClusterSummary]:
        out = []
        for cid in self.cluster_ids():
            members = self.members(cid)
            out.append(
                ClusterSummary(
                    cluster_id=cid,
                    members=members,
                    representative=self.representative(cid),
                    status="validated" if cid in self._validated else "unreviewed",
                    mean_within_d=self.mean_within_d(cid),
                )
            )
        if sort == "size":
            out.sort(key=lambda c: (-len(c.members), c.cluster_id))
        elif sort == "mean_d":
            out.sort(key=lambda c: (-(c.mean_within_d or -1.0), c.cluster_id))
        else:
            raise ValueError(f"unknown sort {sort!r}")
        return out

    # -- mutation -----------------------------------------------------------------

    def apply(self, op: dict) -> None:
        """Validate, fold, and log one operation; bumps the version."""
        kind = op.get("op")
        if kind in ("split", "merge"):
            new_labels = apply_review_ops(
                Partition(labels=self._labels.copy()), [op], self.ids
            ).labels
            if kind == "split":
                self._k_tilde += len(op["groups"]) - 1
                cid = int(op["cluster"])
                self._distinct = {pair for pair in self._distinct if cid not in pair}
                self._validated.discard(cid)
                self._marked_rep.pop(cid, None)
            else:
                cids = [int(c) for c in op["clusters"]]
                target = min(cids)
                gone = set(cids) - {target}
                # transfer "different" verdicts from merged-away clusters
                moved = set()
                for pair in self._distinct:
                    a, b = tuple(pair)
                    a2 = target if a in gone else a
                    b2 = target if b in gone else b
                    if a2 != b2:
                        moved.add(frozenset((a2, b2)))
                self._distinct = moved
                for c in gone:
                    self._validated.discard(c)
                    self._marked_rep.pop(c, None)
                self.comparisons_used += 1
            self._labels = new_labels
        elif kind == "distinct":
            a, b = int(op["a"]), int(op["b"])
            present = set(self.cluster_ids())
            if a == b or a not in present or b not in present:
                raise ValueError("distinct needs two existing, different clusters")
            pair = frozenset((a, b))
            if pair not in self._distinct:
                self._distinct.add(pair)
                self.comparisons_used += 1
        elif kind == "mark_representative":
            cid = int(op["cluster"])
            image = op["image"]
            if image not in self.members(cid):
                raise ValueError(f"{image!r} is not a member of cluster {cid}")
            self._marked_rep[cid] = image
        elif kind == "validate":
            cid = int(op["cluster"])
            if cid not in set(self.cluster_ids()):
                raise ValueError(f"validate: no cluster {cid}")
            self._validated.add(cid)
        else:
            raise ValueError(f"unknown op {kind!r}")
        self.ops.append(op)
        self.version += 1

    # -- comparison queue -----------------------------------------------------------

    def pending_comparisons(self, strategy: str = "distance") -> list[dict]:
        """Representative pairs not yet decided, best candidate first.

        "distance" orders by ascending inter-representative dissimilarity.
        "grade" starts with the worst-preserved representatives, pairing them
        against well-preserved ones first (requires grades).
        """
        cids = self.cluster_ids()
        reps = {c: self.representative(c) for c in cids}
        pairs = []
        for i, a in enumerate(cids):
            for b in cids[i + 1 :]:
                if frozenset((a, b)) in self._distinct:
                    continue
                d = None
                if self.distances is not None:
                    d = self.distances.get(self._index_of[reps[a]], self._index_of[reps[b]])
                pairs.append({"a": a, "b": b, "rep_a": reps[a], "rep_b": reps[b], "d": d})
        if strategy == "distance":
            pairs.sort(key=lambda item: (item["d"] if item["d"] is not None else 1e9, item["a"], item["b"]))
        elif strategy == "grade":
            def key(item):
                bad_a, bad_b = self._badness(item["rep_a"]), self._badness(item["rep_b"])
                worse, better = max(bad_a, bad_b), min(bad_a, bad_b)
                return (-worse, better, item["d"] if item["d"] is not None else 1e9)

            pairs.sort(key=key)
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
        return pairs

    def next_comparison(self, strategy: str = "distance") -> dict | None:
        pending = self.pending_comparisons(strategy)
        if not pending:
            return None
        item = pending[0]
        item["remaining"] = len(pending)
        return item

    # -- reporting --------------------------------------------------------------

    def stats(self) -> dict:
        k = len(self.cluster_ids())
        k_tilde = max(self._k_tilde, k)
        budget = verification_bound(k, k_tilde, n_images=len(self.ids))
        return {
            "n_images": len(self.ids),
            "k": k,
            "k_tilde": k_tilde,
            "comparisons_used": self.comparisons_used,
            "bound": budget.max_comparisons,
            "oracle_bound": budget.oracle_comparisons,
            "brute_force": budget.brute_force,
            "reduction": budget.reduction,
            "validated_clusters": len(self._validated),
            "version": self.version,
        }

    def export_labels_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["image_id", "cluster_id"])
        canonical = self.current_partition().canonical()
        for image_id, label in zip(self.ids, canonical):
            writer.writerow([image_id, int(label)])
        return buf.getvalue()
