"""Queue-backed annotation service for the human oracle.

In-memory store with atomic pending-to-answered transitions. Repeated
submissions for one sample follow last-write-wins, every submission landing
in the audit log. Optionally serves the annotator UI as static files from
the same origin.
"""

from __future__ import annotations

import threading
import time
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel


class QueryItem(BaseModel):
    sample_id: str
    image_base64: str
    width: int
    height: int
    channels: int


class QueryBatch(BaseModel):
    run_id: str
    stage: int
    items: list[QueryItem]
    num_classes: int = 10
    class_names: list[str] | None = None


class LabelSubmission(BaseModel):
    sample_id: str
    outcome: dict


class QueueStore:
    """Thread-safe annotation queue shared by the loop and the annotator."""

    def __init__(self):
        self._lock = threading.Lock()
        self._queries: dict[str, dict] = {}
        self._order: list[str] = []
        self.audit_log: list[dict] = []

    def enqueue(self, batch: QueryBatch):
        with self._lock:
            for item in batch.items:
                entry = {
                    "sample_id": item.sample_id,
                    "image_base64": item.image_base64,
                    "width": item.width,
                    "height": item.height,
                    "channels": item.channels,
                    "run_id": batch.run_id,
                    "stage": batch.stage,
                    "num_classes": batch.num_classes,
                    "class_names": batch.class_names,
                    "status": "pending",
                    "outcome": None,
                }
                if item.sample_id not in self._queries:
                    self._order.append(item.sample_id)
                self._queries[item.sample_id] = entry

    def submit(self, sub: LabelSubmission):
        with self._lock:
            entry = self._queries.get(sub.sample_id)
            if entry is None:
                raise HTTPException(404, f"unknown sample_id {sub.sample_id!r}")
            if "unknown" in sub.outcome:
                if sub.outcome.get("unknown") is not True:
                    raise HTTPException(422, "unknown flag must be true when present")
                outcome = {"unknown": True}
            elif "label" in sub.outcome:
                label = sub.outcome["label"]
                if not isinstance(label, int) or isinstance(label, bool):
                    raise HTTPException(422, "label must be an integer")
                if not (0 <= label < entry["num_classes"]):
                    raise HTTPException(
                        422,
                        f"label {label} outside [0, {entry['num_classes']})",
                    )
                outcome = {"label": label}
            else:
                raise HTTPException(422, "outcome needs 'label' or 'unknown'")
            self.audit_log.append(
                {
                    "ts": time.time(),
                    "sample_id": sub.sample_id,
                    "outcome": outcome,
                    "previous": entry["outcome"],
                    "overwrite": entry["status"] == "answered",
                }
            )
            entry["status"] = "answered"
            entry["outcome"] = outcome

    def list_queries(self, status: str, run_id: str | None):
        with self._lock:
            out = []
            for sid in self._order:
                entry = self._queries[sid]
                if run_id is not None and entry["run_id"] != run_id:
                    continue
                if status != "all" and entry["status"] != status:
                    continue
                out.append(dict(entry))
            return out

    def progress(self, run_id: str):
        with self._lock:
            counts = {"pending": 0, "labeled": 0, "rejected": 0}
            for entry in self._queries.values():
                if entry["run_id"] != run_id:
                    continue
                if entry["status"] == "pending":
                    counts["pending"] += 1
                elif entry["outcome"].get("unknown"):
                    counts["rejected"] += 1
                else:
                    counts["labeled"] += 1
            return counts


def create_app(store: QueueStore | None = None, ui_dir: str | None = None) -> FastAPI:
    store = store or QueueStore()
    app = FastAPI(title="annotation queue")
    app.state.store = store
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.post("/v1/queries", status_code=202)
    def enqueue(batch: QueryBatch):
        store.enqueue(batch)
        return {"queued": len(batch.items)}

    @app.get("/v1/queries")
    def list_queries(status: str = "pending", run_id: str | None = None):
        if status not in ("pending", "answered", "all"):
            raise HTTPException(422, "status must be pending, answered, or all")
        return {"items": store.list_queries(status, run_id)}

    @app.post("/v1/labels")
    def submit(sub: LabelSubmission):
        store.submit(sub)
        return {"ok": True}

    @app.get("/v1/runs/{run_id}/progress")
    def progress(run_id: str):
        return store.progress(run_id)

    @app.get("/v1/audit")
    def audit():
        return {"entries": store.audit_log}

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def serve(host: str = "127.0.0.1", port: int = 8765, ui_dir: str | None = None):
    """Run the service until interrupted."""
    import uvicorn

    uvicorn.run(create_app(ui_dir=ui_dir), host=host, port=port, log_level="warning")
