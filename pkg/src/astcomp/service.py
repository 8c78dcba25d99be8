"""HTTP completion service.

Exposes the trained model at /v1/complete and /v1/health. The loaded model
is an immutable snapshot swapped atomically on reload, so concurrent
requests never observe a half-loaded state. Request handling never mutates
model state.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .infer import Predictor, PrefixError


class NodeIn(BaseModel):
    type: str
    value: str | None = None
    parent: int | None = None


class CompleteRequest(BaseModel):
    nodes: list[NodeIn]
    top_k: int = Field(default=3, ge=1)
    include_graph: bool = False


class ModelHolder:
    """Atomic predictor slot; load builds a fresh Predictor then swaps."""

    def __init__(self) -> None:
        self._predictor: Predictor | None = None
        self._lock = threading.Lock()

    def get(self) -> Predictor | None:
        return self._predictor

    def load(self, checkpoint_path: str) -> Predictor:
        with self._lock:
            current = self._predictor
            new = Predictor.from_checkpoint(checkpoint_path)
            if current is not None and current.checkpoint_id == new.checkpoint_id:
                return current  # identical bytes: keep the existing snapshot
            self._predictor = new
            return new


def create_app(
    checkpoint_path: str | None = None,
    cors_origins: list[str] | None = None,
    playground_dir: str | None = None,
) -> FastAPI:
    app = FastAPI(title="astcomp completion service")
    holder = ModelHolder()
    app.state.holder = holder

    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins if cors_origins else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def schema_violation(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/v1/health")
    def health():
        predictor = holder.get()
        if predictor is None:
            return JSONResponse(
                status_code=503,
                content={"status": "no model loaded", "checkpoint": None, "vocab_hashes": None},
            )
        return {
            "status": "ready",
            "checkpoint": predictor.checkpoint_id,
            "vocab_hashes": {
                "value": predictor.vocab.value_hash(),
                "type": predictor.vocab.type_hash(),
            },
        }

    @app.post("/v1/complete")
    def complete(request: CompleteRequest):
        predictor = holder.get()
        if predictor is None:
            return JSONResponse(status_code=503, content={"detail": "no model loaded"})
        try:
            completion = predictor.complete(
                [n.model_dump() for n in request.nodes],
                top=request.top_k,
                include_graph=request.include_graph,
            )
        except PrefixError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        body = {
            "values": completion.values,
            "types": completion.types,
            "model_info": completion.model_info,
        }
        if completion.graph is not None:
            body["graph"] = completion.graph
        return body

    if playground_dir and Path(playground_dir).is_dir():
        app.mount("/", StaticFiles(directory=playground_dir, html=True), name="playground")

    if checkpoint_path:
        holder.load(checkpoint_path)
    return app
