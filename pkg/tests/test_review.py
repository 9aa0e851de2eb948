import numpy as np
import pytest

from diestudy.clustering import Partition
from diestudy.review import ReviewSession, apply_review_ops
from helpers import dm_from_square, two_block_square


def session_3clusters(with_distances=True, grades=None):
    ids = [f"img{k}" for k in range(6)]
    base = Partition(labels=np.array([1, 1, 2, 2, 3, 3]))
    dm = dm_from_square(two_block_square(6, noise=0.05, seed=21)) if with_distances else None
    return ReviewSession(ids=ids, base=base, distances=dm, grades=grades or {})


class TestApplyReviewOps:
    def test_empty_log(self):
        base = Partition(labels=np.array([1, 1, 2]))
        out = apply_review_ops(base, [], ids=["a", "b", "c"])
        np.testing.assert_array_equal(out.labels, base.labels)

    def test_split_then_merge_inverse(self):
        base = Partition(labels=np.array([5, 5, 5]))
        ids = ["a", "b", "c"]
        ops = [
            {"op": "split", "cluster": 5, "groups": [["a"], ["b", "c"]]},
            {"op": "merge", "clusters": [5, 6]},
        ]
        out = apply_review_ops(base, ops, ids=ids)
        assert out.n_clusters == 1
        np.testing.assert_array_equal(out.canonical(), base.canonical())

    def test_published_scale_arithmetic(self):
        # split a base prediction up to 505 clusters, then merge 208 pairs
        # back down: 297 classes remain
        n = 1434
        rng = np.random.default_rng(60)
        base_k = 350
        labels = np.concatenate([np.arange(1, base_k + 1), rng.integers(1, base_k + 1, n - base_k)])
        ids = [f"c{k}" for k in range(n)]
        base = Partition(labels=labels)
        ops = []
        # phase 1: split clusters until K-tilde = 505
        next_label = base_k
        cur = base
        while cur.n_clusters < 505:
            sizes = {c: m for c, m in zip(*np.unique(cur.labels, return_counts=True)) if m >= 2}
            cid = int(next(iter(sizes)))
            members = [ids[k] for k in np.flatnonzero(cur.labels == cid)]
            op = {"op": "split", "cluster": cid, "groups": [[members[0]], members[1:]]}
            ops.append(op)
            cur = apply_review_ops(base, ops, ids=ids)
        assert cur.n_clusters == 505
        # phase 2: merge 208 pairs
        for _ in range(208):
            remaining = np.unique(cur.labels)
            op = {"op": "merge", "clusters": [int(remaining[0]), int(remaining[1])]}
            ops.append(op)
            cur = apply_review_ops(base, ops, ids=ids)
        assert cur.n_clusters == 297

    def test_split_must_cover_exactly(self):
        base = Partition(labels=np.array([1, 1, 1]))
        ids = ["a", "b", "c"]
        with pytest.raises(ValueError, match="cover"):
            apply_review_ops(base, [{"op": "split", "cluster": 1, "groups": [["a"], ["b"]]}], ids)
        with pytest.raises(ValueError, match="two groups"):
            apply_review_ops(base, [{"op": "split", "cluster": 1, "groups": [["a", "b", "c"]]}], ids)

    def test_merge_unknown_cluster(self):
        base = Partition(labels=np.array([1, 2]))
        with pytest.raises(ValueError, match="no cluster"):
            apply_review_ops(base, [{"op": "merge", "clusters": [1, 9]}], ["a", "b"])

    def test_unknown_op(self):
        base = Partition(labels=np.array([1, 2]))
        with pytest.raises(ValueError, match="unknown op"):
            apply_review_ops(base, [{"op": "rename"}], ["a", "b"])


class TestReviewSession:
    def test_replay_equals_current(self):
        session = session_3clusters()
        session.apply({"op": "split", "cluster": 1, "groups": [["img0"], ["img1"]]})
        session.apply({"op": "merge", "clusters": [2, 3]})
        session.apply({"op": "validate", "cluster": 2})
        np.testing.assert_array_equal(
            session.replay().canonical(), session.current_partition().canonical()
        )

    def test_merge_increments_comparisons(self):
        session = session_3clusters()
        assert session.comparisons_used == 0
        session.apply({"op": "merge", "clusters": [1, 2]})
        assert session.comparisons_used == 1
        session.apply({"op": "distinct", "a": 1, "b": 3})
        assert session.comparisons_used == 2

    def test_split_raises_k_tilde(self):
        session = session_3clusters()
        session.apply({"op": "split", "cluster": 1, "groups": [["img0"], ["img1"]]})
        stats = session.stats()
        assert stats["k_tilde"] == 4
        assert stats["k"] == 4

    def test_distinct_pairs_leave_queue(self):
        session = session_3clusters()
        first = session.next_comparison()
        assert first is not None
        session.apply({"op": "distinct", "a": first["a"], "b": first["b"]})
        second = session.next_comparison()
        assert {second["a"], second["b"]} != {first["a"], first["b"]}
        session.apply({"op": "distinct", "a": second["a"], "b": second["b"]})
        third = session.next_comparison()
        session.apply({"op": "distinct", "a": third["a"], "b": third["b"]})
        assert session.next_comparison() is None  # queue exhausted

    def test_queue_ordered_by_distance(self):
        session = session_3clusters()
        pending = session.pending_comparisons()
        ds = [item["d"] for item in pending]
        assert ds == sorted(ds)

    def test_merge_transfers_distinct_marks(self):
        session = session_3clusters()
        session.apply({"op": "distinct", "a": 2, "b": 3})
        session.apply({"op": "merge", "clusters": [2, 3]})  # allowed: user overrides
        # now only pair (1, 2) remains undecided
        pending = session.pending_comparisons()
        assert len(pending) == 1 and {pending[0]["a"], pending[0]["b"]} == {1, 2}

    def test_representative_prefers_good_grade(self):
        grades = {"img0": "good", "img1": "extremely fine"}
        session = session_3clusters(grades=grades)
        assert session.representative(1) == "img1"
        session.apply({"op": "mark_representative", "cluster": 1, "image": "img0"})
        assert session.representative(1) == "img0"

    def test_grade_strategy_prioritizes_bad_reps(self):
        grades = {
            "img0": "good",  # cluster 1 rep candidates img0/img1
            "img1": "good",
            "img2": "extremely fine",
            "img3": "extremely fine",
            "img4": "very fine",
            "img5": "very fine",
        }
        session = session_3clusters(grades=grades)
        first = session.next_comparison(strategy="grade")
        assert 1 in (first["a"], first["b"])  # the badly preserved rep goes first

    def test_export_reflects_ops(self):
        session = session_3clusters()
        session.apply({"op": "merge", "clusters": [1, 3]})
        csv_text = session.export_labels_csv()
        rows = [line.split(",") for line in csv_text.strip().splitlines()[1:]]
        labels = {img: int(lab) for img, lab in rows}
        assert labels["img0"] == labels["img4"]
        assert labels["img0"] != labels["img2"]

    def test_version_increments(self):
        session = session_3clusters()
        v0 = session.version
        session.apply({"op": "validate", "cluster": 1})
        assert session.version == v0 + 1

    def test_stats_budget(self):
        session = session_3clusters()
        stats = session.stats()
        assert stats["k"] == 3 and stats["k_tilde"] == 3
        assert stats["bound"] == 3  # k(k-1)/2 when nothing was split
        assert stats["brute_force"] == 15
