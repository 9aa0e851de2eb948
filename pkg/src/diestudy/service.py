"""HTTP/JSON review service (versioned under /api/v1).

Read endpoints serve cluster summaries, images, the suggested next
representative comparison, progress stats, and the label export. All writes
go through POST /api/v1/ops carrying the client's expected version token;
a stale token is rejected with 409 so concurrent editors cannot clobber each
other. A single process-wide lock serializes writers.
"""

from __future__ import annotations

import threading
from dataclasses import asdict
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .review import ReviewSession


class OpRequest(BaseModel):
    expected_version: int
    op: dict


def create_app(
    session: ReviewSession,
    image_dir: str | Path | None = None,
    static_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="die review service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    lock = threading.Lock()
    images = Path(image_dir) if image_dir else None

    @app.get("/api/v1/clusters")
    def clusters(sort: str = Query("size", pattern="^(size|mean_d)$")):
        with lock:
            return {
                "version": session.version,
                "clusters": [asdict(c) for c in session.cluster_summaries(sort=sort)],
            }

    @app.get("/api/v1/clusters/{cluster_id}")
    def cluster_detail(cluster_id: int):
        with lock:
            if cluster_id not in set(session.cluster_ids()):
                raise HTTPException(404, f"no cluster {cluster_id}")
            members = session.members(cluster_id)
            return {
                "version": session.version,
                "cluster_id": cluster_id,
                "members": members,
                "grades": {m: session.grades.get(m) for m in members},
                "representative": session.representative(cluster_id),
                "mean_within_d": session.mean_within_d(cluster_id),
            }

    @app.get("/api/v1/images/{image_id}")
    def image(image_id: str):
        if images is None:
            raise HTTPException(404, "no image store configured")
        safe = Path(image_id).name
        for ext in (".png", ".jpg", ".jpeg"):
            candidate = images / f"{safe}{ext}"
            if candidate.exists():
                return FileResponse(candidate)
        raise HTTPException(404, f"no image {image_id}")

    @app.get("/api/v1/next-comparison")
    def next_comparison(strategy: str = Query("distance", pattern="^(distance|grade)$")):
        with lock:
            item = session.next_comparison(strategy=strategy)
            return {"version": session.version, "comparison": item}

    @app.post("/api/v1/ops")
    def post_op(req: OpRequest):
        with lock:
            if req.expected_version != session.version:
                raise HTTPException(
                    409,
                    f"version conflict: expected {req.expected_version}, "
                    f"server at {session.version}",
                )
            try:
                session.apply(req.op)
            except (ValueError, KeyError) as exc:
                raise HTTPException(422, str(exc))
            return {"version": session.version}

    @app.get("/api/v1/export/labels.csv", response_class=PlainTextResponse)
    def export_labels():
        with lock:
            return PlainTextResponse(
                session.export_labels_csv(), media_type="text/csv"
            )

    @app.get("/api/v1/stats")
    def stats():
        with lock:
            return session.stats()

    @app.get("/api/v1/ops")
    def ops_log():
        with lock:
            return {"version": session.version, "ops": session.ops}

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
