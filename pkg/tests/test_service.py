import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from diestudy.clustering import Partition
from diestudy.review import ReviewSession, apply_review_ops
from diestudy.service import create_app
from helpers import dm_from_square, two_block_square


@pytest.fixture
def client(tmp_path):
    ids = [f"img{k}" for k in range(6)]
    for image_id in ids:
        arr = (np.random.default_rng(0).random((16, 16)) * 255).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(tmp_path / f"{image_id}.png")
    session = ReviewSession(
        ids=ids,
        base=Partition(labels=np.array([1, 1, 2, 2, 3, 3])),
        distances=dm_from_square(two_block_square(6, noise=0.05, seed=22)),
        grades={"img0": "good"},
    )
    app = create_app(session, image_dir=tmp_path)
    return TestClient(app), session


class TestReadEndpoints:
    def test_clusters_listing(self, client):
        http, _ = client
        resp = http.get("/api/v1/clusters")
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["clusters"]) == 3
        assert {c["cluster_id"] for c in body["clusters"]} == {1, 2, 3}
        assert all(len(c["members"]) == 2 for c in body["clusters"])

    def test_cluster_detail_and_404(self, client):
        http, _ = client
        assert http.get("/api/v1/clusters/1").status_code == 200
        assert http.get("/api/v1/clusters/99").status_code == 404

    def test_image_bytes(self, client):
        http, _ = client
        resp = http.get("/api/v1/images/img0")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert http.get("/api/v1/images/nope").status_code == 404

    def test_stats(self, client):
        http, _ = client
        stats = http.get("/api/v1/stats").json()
        assert stats["k"] == 3 and stats["comparisons_used"] == 0


class TestOps:
    def test_merge_then_export(self, client):
        http, session = client
        version = http.get("/api/v1/stats").json()["version"]
        resp = http.post(
            "/api/v1/ops",
            json={"expected_version": version, "op": {"op": "merge", "clusters": [1, 2]}},
        )
        assert resp.status_code == 200
        csv_text = http.get("/api/v1/export/labels.csv").text
        rows = dict(line.split(",") for line in csv_text.strip().splitlines()[1:])
        assert rows["img0"] == rows["img2"]
        assert http.get("/api/v1/stats").json()["comparisons_used"] == 1

    def test_version_conflict_409(self, client):
        http, _ = client
        resp = http.post(
            "/api/v1/ops",
            json={"expected_version": 999, "op": {"op": "validate", "cluster": 1}},
        )
        assert resp.status_code == 409

    def test_invalid_op_422(self, client):
        http, _ = client
        version = http.get("/api/v1/stats").json()["version"]
        resp = http.post(
            "/api/v1/ops",
            json={"expected_version": version, "op": {"op": "merge", "clusters": [1, 42]}},
        )
        assert resp.status_code == 422

    def test_log_replay_equals_export(self, client):
        http, session = client
        for op in (
            {"op": "split", "cluster": 1, "groups": [["img0"], ["img1"]]},
            {"op": "merge", "clusters": [2, 3]},
        ):
            version = http.get("/api/v1/stats").json()["version"]
            assert (
                http.post("/api/v1/ops", json={"expected_version": version, "op": op}).status_code
                == 200
            )
        log = http.get("/api/v1/ops").json()["ops"]
        replayed = apply_review_ops(session.base, log, session.ids)
        np.testing.assert_array_equal(
            replayed.canonical(), session.current_partition().canonical()
        )

    def test_comparison_flow_to_exhaustion(self, client):
        http, _ = client
        decided = 0
        while True:
            item = http.get("/api/v1/next-comparison").json()["comparison"]
            if item is None:
                break
            version = http.get("/api/v1/stats").json()["version"]
            op = {"op": "distinct", "a": item["a"], "b": item["b"]}
            assert (
                http.post("/api/v1/ops", json={"expected_version": version, "op": op}).status_code
                == 200
            )
            decided += 1
        assert decided == 3
        stats = http.get("/api/v1/stats").json()
        assert stats["comparisons_used"] == 3
        assert stats["k"] == 3
