"""HTTP surface: ``POST /embed``, ``POST /generate``, ``GET /health``.

JSON over HTTP/1.1; errors come back as ``{"code": ..., "message": ...}``.
Generated images are returned inline as base64 unless an images directory
is configured (shared-filesystem deployments), in which case the response
carries the file path instead.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .backends import MockBackend, RealBackend, RealBackendConfig


@dataclass
class Settings:
    mode: str = "mock"
    seed: int = 0
    max_prompt_chars: int = 4096
    max_batch: int = 4096
    images_dir: str | None = None  # set when server and harness share a filesystem
    real: RealBackendConfig | None = None


def _error(status: int, code: str, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message, **extra})


def create_app(settings: Settings | None = None) -> FastAPI:
    settings = settings or Settings()
    if settings.mode == "mock":
        backend = MockBackend(seed=settings.seed)
    elif settings.mode == "real":
        backend = RealBackend(settings.real)
    else:
        raise ValueError(f"mode must be mock|real, got {settings.mode!r}")

    app = FastAPI(title="csegg-sidecar", version="0.1.0")
    app.state.backend = backend
    app.state.settings = settings
    images_dir = Path(settings.images_dir) if settings.images_dir else None
    if images_dir is not None:
        images_dir.mkdir(parents=True, exist_ok=True)
    counter = {"n": 0}

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError):
        return _error(400, "BadRequest", str(exc.errors()[:3]))

    def require_ready() -> JSONResponse | None:
        if not backend.ready:
            detail = getattr(backend, "error", None)
            return _error(503, "ModelsNotReady",
                          detail or "models are still loading, retry later")
        return None

    @app.get("/health")
    async def health():
        not_ready = require_ready()
        if not_ready is not None:
            return not_ready
        return {"mode": backend.mode, "models": backend.models, "dim": backend.dim}

    @app.post("/embed")
    async def embed(body: dict):
        not_ready = require_ready()
        if not_ready is not None:
            return not_ready
        texts = body.get("texts")
        if not isinstance(texts, list) or not texts:
            return _error(400, "EmptyTexts", "texts must be a non-empty list of strings")
        if not all(isinstance(t, str) for t in texts):
            return _error(400, "BadTexts", "texts must all be strings")
        if len(texts) > settings.max_batch:
            return _error(413, "BatchTooLarge",
                          f"at most {settings.max_batch} texts per request",
                          max_batch=settings.max_batch)
        vectors = backend.embed(texts)
        return {"embeddings": vectors, "dim": backend.dim}

    @app.post("/generate")
    async def generate(body: dict):
        not_ready = require_ready()
        if not_ready is not None:
            return not_ready
        prompt = body.get("prompt")
        if not isinstance(prompt, str) or not prompt:
            return _error(400, "EmptyPrompt", "prompt must be a non-empty string")
        if len(prompt) > settings.max_prompt_chars:
            return _error(
                413, "PromptTooLong",
                f"prompt has {len(prompt)} characters; truncate to "
                f"{settings.max_prompt_chars} or fewer",
                max_length=settings.max_prompt_chars,
            )
        n = body.get("n", 1)
        if not isinstance(n, int) or n < 1:
            return _error(400, "BadCount", "n must be a positive integer")
        seed = body.get("seed", 0)
        if not isinstance(seed, int):
            return _error(400, "BadSeed", "seed must be an integer")
        images = backend.generate(prompt, n, seed)
        records = []
        for img in images:
            rec = {"format": img.format, "width": img.width, "height": img.height}
            if images_dir is not None:
                counter["n"] += 1
                path = images_dir / f"gen_{counter['n']:08d}_{img.seed}.{img.format}"
                path.write_bytes(img.data)
                rec["path"] = str(path)
            else:
                rec["b64"] = base64.b64encode(img.data).decode("ascii")
            records.append(rec)
        return {"images": records, "seeds": [img.seed for img in images]}

    return app
