"""HTTP surface for the expert validation loop.

Serves the pending queue, pair context snapshots, the persisted concept
graph and run metrics; resolutions are guarded by an optimistic version
check and durably persisted before they are acknowledged.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from . import refine as ref
from .oracle import Decision, DecisionKind


class RecordedOnlyOracle:
    """Serve-time oracle: never calls a model, trusts recorded decisions only."""

    def decide(self, a, b) -> Decision:
        return Decision(DecisionKind.DISSIMILAR, consulted=False)


class GraphStore:
    """Durable home of the concept-graph document; single writer."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self) -> dict:
        with open(self.path, encoding="utf-8") as handle:
            return json.load(handle)

    def save(self, doc: dict) -> None:
        with self._lock:
            tmp = self.path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as handle:
                json.dump(doc, handle, indent=2)
                handle.write("\n")
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp, self.path)


def create_app(
    store: GraphStore,
    oracle=None,
    options: ref.RefineOptions | None = None,
    metrics: dict | None = None,
    console_dir: str | None = None,
    token: str | None = None,
) -> FastAPI:
    app = FastAPI(title="kroma validation service")
    doc = store.load()
    engine = ref.RefinementEngine.from_document(doc, oracle or RecordedOnlyOracle(), options)
    state = {"version": doc.get("version", 0), "metrics": metrics or {}}
    write_lock = threading.Lock()
    token = token if token is not None else os.environ.get("KROMA_API_TOKEN")

    if token:
        @app.middleware("http")
        async def require_bearer(request, call_next):
            if request.url.path.startswith("/api/"):
                supplied = request.headers.get("Authorization", "")
                if supplied != f"Bearer {token}":
                    return JSONResponse({"detail": "missing or bad bearer token"}, status_code=401)
            return await call_next(request)

    def item_view(item: ref.ValidationItem) -> dict:
        view = item.to_dict()
        view["graph_version"] = state["version"]
        labels = []
        for cid in item.pair:
            concept = engine.concepts.get(cid)
            labels.append(concept.display_label if concept else cid.iri)
        view["pair_labels"] = labels
        return view

    @app.get("/api/v1/queue")
    def queue(status: str = "pending"):
        if status == "pending":
            items = engine.queue.pending()
        else:
            items = [i for i in engine.queue.all_items() if i.status.value == status]
        return [item_view(i) for i in items]

    @app.get("/api/v1/pairs/{item_id}/context")
    def pair_context(item_id: int):
        item = engine.queue.get(item_id)
        if item is None:
            raise HTTPException(status_code=404, detail="unknown item")
        return {"id": item.item_id, "pair": [str(p) for p in item.pair], "context": item.context}

    @app.get("/api/v1/graph")
    def graph():
        return engine.concept_graph(version=state["version"]).to_document(
            engine.queue, engine.negatives
        )

    @app.get("/api/v1/metrics")
    def get_metrics():
        return state["metrics"]

    @app.post("/api/v1/queue/{item_id}/resolve")
    def resolve(item_id: int, body: dict):
        decision = body.get("decision")
        version = body.get("version")
        if decision not in ("approve", "reject"):
            raise HTTPException(status_code=422, detail="decision must be approve or reject")
        with write_lock:
            if version != state["version"]:
                raise HTTPException(
                    status_code=409,
                    detail={"error": "stale version", "current_version": state["version"]},
                )
            item = engine.queue.get(item_id)
            if item is None:
                raise HTTPException(status_code=404, detail="unknown item")
            if item.status is not ref.ItemStatus.PENDING:
                raise HTTPException(
                    status_code=409,
                    detail={"error": "already resolved", "current_version": state["version"]},
                )
            graph = engine.resolve_validation(item_id, decision)
            state["version"] += 1
            graph = engine.concept_graph(version=state["version"])
            # Durably persisted before the response goes out.
            store.save(graph.to_document(engine.queue, engine.negatives))
            merged_class = None
            for klass in graph.classes:
                if item.pair[0] in klass.members and item.pair[1] in klass.members:
                    merged_class = [str(m) for m in klass.members]
                    break
            return JSONResponse(
                {
                    "id": item_id,
                    "status": engine.queue.get(item_id).status.value,
                    "graph_version": state["version"],
                    "merged_class": merged_class,
                    "negative_constraint": decision == "reject",
                }
            )

    if console_dir and Path(console_dir).is_dir():
        index = Path(console_dir) / "index.html"

        @app.get("/console")
        def console_index():
            return FileResponse(index)

        app.mount("/console", StaticFiles(directory=console_dir), name="console")

    return app
