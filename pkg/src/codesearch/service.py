"""HTTP JSON API over the retrieval stack.

Endpoints:
  POST /api/search  {query, mode, k_rerank, k_results} -> ranked results
  GET  /api/meta    read-only service configuration
  GET  /health      liveness probe, returns "ok"

State is immutable after startup; requests never mutate the model or index.
Validation failures return 400 with a JSON error body; a service without a
loaded model/index answers 503 on search and meta.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Mapping

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .cascade import CascadeConfig, MODE_CASCADE, MODE_FAST, MODE_SLOW_FULL, retrieve
from .corpus import BimodalPair, Mode, TokenizationError, Tokenizer
from .index import VectorIndex
from .model import SearchModel

# external mode names; "slow" maps to the internal slow_full mode
API_MODES = {
    "fast": MODE_FAST,
    "cascade": MODE_CASCADE,
    "slow": MODE_SLOW_FULL,
}

MAX_K_RESULTS = 100


@dataclass
class ServiceState:
    model: SearchModel
    index: VectorIndex
    store: Mapping[str, BimodalPair]
    tokenizer: Tokenizer
    default_config: CascadeConfig
    started_at: float

    @property
    def ready(self) -> bool:
        return (
            self.model is not None
            and self.index is not None
            and len(self.index) > 0
        )


class SearchRequest(BaseModel):
    query: str
    mode: str = "cascade"
    k_rerank: int | None = Field(default=None, ge=1)
    k_results: int = Field(default=10)


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(state: ServiceState | None = None, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="codesearch", docs_url=None, redoc_url=None)
    app.state.search = state

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        # malformed bodies are client errors, not unprocessable entities
        return _error(400, f"invalid request: {exc.errors()[:3]}")

    @app.get("/health")
    async def health() -> PlainTextResponse:
        return PlainTextResponse("ok")

    @app.get("/api/meta")
    async def meta():
        st: ServiceState | None = app.state.search
        if st is None or not st.ready:
            return _error(503, "service not ready: model/index not loaded")
        config = asdict(st.model.config)
        config["variant"] = st.model.variant
        return {
            "index_size": len(st.index),
            "model_config": config,
            "default_k": st.default_config.k,
            "uptime_seconds": time.time() - st.started_at,
        }

    @app.post("/api/search")
    async def search(body: SearchRequest):
        st: ServiceState | None = app.state.search
        if st is None or not st.ready:
            return _error(503, "service not ready: model/index not loaded")
        if body.mode not in API_MODES:
            return _error(400, f"mode must be one of {sorted(API_MODES)}")
        if not (1 <= body.k_results <= MAX_K_RESULTS):
            return _error(400, f"k_results must be in [1, {MAX_K_RESULTS}]")
        if not body.query.strip():
            return _error(400, "query must not be empty")
        internal_mode = API_MODES[body.mode]
        if internal_mode != MODE_FAST and not st.model.has_classifier:
            return _error(400, f"mode {body.mode!r} needs a model with a classifier head")
        k_rerank = body.k_rerank if body.k_rerank is not None else st.default_config.k
        try:
            nl_tokens = st.tokenizer.tokenize(body.query, Mode.NL)
        except TokenizationError as exc:
            return _error(400, f"query tokenization failed: {exc}")
        config = CascadeConfig(
            k=k_rerank,
            rerank_batch_size=st.default_config.rerank_batch_size,
            mode=internal_mode,
        )
        ranking = retrieve(st.model, st.index, st.store, nl_tokens, config)
        results = []
        for entry in ranking.entries[: body.k_results]:
            pair = st.store[entry.candidate_id]
            item = {
                "id": entry.candidate_id,
                "docstring": pair.nl_raw,
                "code": pair.pl_raw,
                "fast_score": entry.fast_score,
                "rank": entry.final_rank,
            }
            if entry.rerank_score is not None:
                item["rerank_score"] = entry.rerank_score
            results.append(item)
        return {
            "results": results,
            "timings": {
                "encode_ms": ranking.timings.encode_ms,
                "lookup_ms": ranking.timings.lookup_ms,
                "rerank_ms": ranking.timings.rerank_ms,
            },
            "mode": body.mode,
            "k_rerank": k_rerank,
            "pool_size": len(st.index),
        }

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def make_state(
    model: SearchModel,
    index: VectorIndex,
    store: Mapping[str, BimodalPair],
    tokenizer: Tokenizer,
    default_k: int = 10,
) -> ServiceState:
    return ServiceState(
        model=model,
        index=index,
        store=store,
        tokenizer=tokenizer,
        default_config=CascadeConfig(k=default_k),
        started_at=time.time(),
    )
