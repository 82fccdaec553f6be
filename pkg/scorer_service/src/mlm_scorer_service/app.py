"""FastAPI wiring for the scorer protocol.

Protocol violations (bad mode, missing sentinel, out-of-range candidate,
oversize text) return 400 with a JSON error body; anything unexpected is a
plain 500. Responses carry exactly the contract fields, nothing extra.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .model import WITH_LEADING_SPACE, LoadedModel, ServiceError, debug_distribution, fill, tokenize_text


class TokenizeBody(BaseModel):
    text: str
    mode: str = WITH_LEADING_SPACE


class FillBody(BaseModel):
    context: str
    num_masks: int
    candidate_ids: list[int] = Field(default_factory=list)
    topk: int = 0


class DebugBody(BaseModel):
    context: str
    num_masks: int = 1


def create_app(lm: LoadedModel) -> FastAPI:
    app = FastAPI(title="mlm-scorer-service", docs_url=None, redoc_url=None)

    @app.exception_handler(ServiceError)
    async def _protocol_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/info")
    def info():
        return lm.info()

    @app.post("/tokenize")
    def tokenize(body: TokenizeBody):
        return tokenize_text(lm, body.text, body.mode)

    @app.post("/fill")
    def fill_endpoint(body: FillBody):
        return fill(lm, body.context, body.num_masks, body.candidate_ids, body.topk)

    @app.post("/debug/distribution")
    def debug(body: DebugBody):
        return debug_distribution(lm, body.context, body.num_masks)

    return app
