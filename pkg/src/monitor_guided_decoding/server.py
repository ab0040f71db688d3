"""
FastAPI logit server exposing any backend over the remote backend contract.
"""

import logging
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .errors import BackendError
from .lm import LanguageModelBackend

logger = logging.getLogger(__name__)


class LogitsRequest(BaseModel):
    tokens: list[int]
    allowed_ids: Optional[list[int]] = None


class LogitsResponse(BaseModel):
    logits: Optional[list[float]] = None
    sparse: Optional[list[tuple[int, float]]] = None


class TokenizeRequest(BaseModel):
    text: str


class TokenizeResponse(BaseModel):
    tokens: list[int]


def add_logit_routes(app: FastAPI, backend: LanguageModelBackend, *, prefix: str = "/v1") -> None:
    """
    Add ``POST {prefix}/logits`` and ``POST {prefix}/tokenize`` to an app.

    Args:
        app: FastAPI application instance
        backend: Backend answering the requests
        prefix: Route prefix
    """

    @app.post(f"{prefix}/logits", response_model=LogitsResponse, response_model_exclude_none=True)
    def get_logits(request: LogitsRequest) -> LogitsResponse:
        try:
            logits = backend.logits(request.tokens, request.allowed_ids)
        except BackendError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        if request.allowed_ids is None:
            return LogitsResponse(logits=[float(v) for v in logits])
        allowed = sorted(set(request.allowed_ids))
        if allowed and not 0 <= allowed[0] <= allowed[-1] < len(logits):
            raise HTTPException(status_code=400, detail=f"allowed_ids outside vocabulary of size {len(logits)}")
        return LogitsResponse(sparse=[(i, float(logits[i])) for i in allowed])

    @app.post(f"{prefix}/tokenize", response_model=TokenizeResponse)
    def tokenize(request: TokenizeRequest) -> TokenizeResponse:
        try:
            return TokenizeResponse(tokens=backend.tokenize(request.text))
        except BackendError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e

    @app.get(f"{prefix}/vocab")
    def vocab_info() -> dict[str, object]:
        return {"size": backend.vocab.size, "special": backend.vocab.special}


def create_logit_app(backend: LanguageModelBackend, title: str = "MGD logit server") -> FastAPI:
    """A standalone app serving ``backend``."""
    app = FastAPI(title=title)
    add_logit_routes(app, backend)
    logger.debug("logit server ready for a vocabulary of %d tokens", backend.vocab.size)
    return app
