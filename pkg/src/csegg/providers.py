"""Embedding and image-generation backends.

Two kinds ship with the harness: fully deterministic in-process mocks, and
HTTP clients speaking the sidecar protocol (``POST /embed``,
``POST /generate``). The mock paths are integer-hash based and
bit-deterministic across platforms.

Mock embedding scheme (documented, reimplementable by hand):

1. every whitespace token maps to a vector: SHA-256 of
   ``seed_le8 || token_utf8`` expanded with a 4-byte little-endian block
   counter until ``dim`` 32-bit words are available; each word ``v``
   becomes ``v / 2**32 * 2 - 1``;
2. token vectors are summed in token order and L2-normalized (an empty
   text stays the zero vector).

Mock image scheme: a binary PPM (P6) raster whose pixel stream is the
same SHA-256 counter expansion of ``seed_le8 || prompt_utf8``; image ``i``
of a request uses ``seed + i``.
"""

from __future__ import annotations

import base64
import hashlib
import math
import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx

from .errors import DimensionMismatch, GeneratorUnavailable, ProviderUnavailable

MOCK_DIM = 64
MOCK_IMAGE_SIZE = (64, 64)
DEFAULT_BACKOFF = (0.1, 0.5, 2.0)


def expand_hash(data: bytes, n_bytes: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < n_bytes:
        out.extend(hashlib.sha256(data + counter.to_bytes(4, "little")).digest())
        counter += 1
    return bytes(out[:n_bytes])


def token_vector(token: str, seed: int, dim: int = MOCK_DIM) -> list[float]:
    raw = expand_hash(seed.to_bytes(8, "little") + token.encode("utf-8"), dim * 4)
    return [
        int.from_bytes(raw[4 * i: 4 * i + 4], "little") / 2**32 * 2.0 - 1.0
        for i in range(dim)
    ]


def mock_embedding(text: str, seed: int = 0, dim: int = MOCK_DIM) -> list[float]:
    acc = [0.0] * dim
    for token in text.split():
        for i, v in enumerate(token_vector(token, seed, dim)):
            acc[i] += v
    norm = math.sqrt(sum(v * v for v in acc))
    if norm > 0.0:
        acc = [v / norm for v in acc]
    return acc


def mock_image_bytes(prompt: str, seed: int, size: tuple[int, int] = MOCK_IMAGE_SIZE) -> bytes:
    w, h = size
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    body = expand_hash(seed.to_bytes(8, "little", signed=True) + prompt.encode("utf-8"), w * h * 3)
    return header + body


@dataclass(frozen=True)
class GeneratedImage:
    data: bytes
    format: str
    seed: int
    width: int
    height: int


class EmbeddingProvider(Protocol):
    @property
    def dim(self) -> int: ...

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class ImageGenerator(Protocol):
    def generate(self, prompt: str, n: int, seed: int) -> list[GeneratedImage]: ...


class MockEmbedder:
    """In-process deterministic embedding provider."""

    def __init__(self, seed: int = 0, dim: int = MOCK_DIM):
        self.seed = seed
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return [mock_embedding(t, self.seed, self._dim) for t in texts]


class MockGenerator:
    """In-process deterministic placeholder-image generator."""

    def __init__(self, size: tuple[int, int] = MOCK_IMAGE_SIZE):
        self.size = size

    def generate(self, prompt: str, n: int, seed: int) -> list[GeneratedImage]:
        if n < 1:
            raise ValueError("n must be >= 1")
        w, h = self.size
        return [
            GeneratedImage(mock_image_bytes(prompt, seed + i, self.size), "ppm", seed + i, w, h)
            for i in range(n)
        ]


def _post_with_retry(
    url: str,
    payload: dict,
    backoff_s: Sequence[float],
    error_cls: type[ProviderUnavailable],
    timeout: float,
    sleep=time.sleep,
) -> dict:
    attempts = 0
    last_error: Exception | None = None
    for wait in (*backoff_s, None):
        attempts += 1
        try:
            resp = httpx.post(url, json=payload, timeout=timeout)
            resp.raise_for_status()
            return resp.json()
        except httpx.HTTPStatusError as e:
            # 4xx is a contract violation, not an availability problem
            if 400 <= e.response.status_code < 500:
                raise error_cls(
                    f"{url} rejected request: {e.response.status_code} {e.response.text[:200]}",
                    attempts=attempts,
                    backoff_s=tuple(backoff_s[: attempts - 1]),
                ) from e
            last_error = e
        except httpx.HTTPError as e:
            last_error = e
        if wait is not None:
            sleep(wait)
    raise error_cls(
        f"{url} unreachable: {last_error}",
        attempts=attempts,
        backoff_s=tuple(backoff_s),
    ) from last_error


class HttpEmbedder:
    """Client for the sidecar ``POST /embed`` contract."""

    def __init__(self, base_url: str, backoff_s: Sequence[float] = DEFAULT_BACKOFF,
                 timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.backoff_s = tuple(backoff_s)
        self.timeout = timeout
        self._dim: int | None = None

    @property
    def dim(self) -> int:
        if self._dim is None:
            self._dim = int(self.embed_raw(["probe"])["dim"])
        return self._dim

    def embed_raw(self, texts: Sequence[str]) -> dict:
        return _post_with_retry(
            f"{self.base_url}/embed", {"texts": list(texts)},
            self.backoff_s, ProviderUnavailable, self.timeout,
        )

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        body = self.embed_raw(texts)
        vectors = [list(map(float, v)) for v in body["embeddings"]]
        if len(vectors) != len(texts):
            raise DimensionMismatch(
                f"asked for {len(texts)} embeddings, got {len(vectors)}"
            )
        self._dim = int(body["dim"])
        return vectors


class HttpGenerator:
    """Client for the sidecar ``POST /generate`` contract."""

    def __init__(self, base_url: str, backoff_s: Sequence[float] = DEFAULT_BACKOFF,
                 timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.backoff_s = tuple(backoff_s)
        self.timeout = timeout

    def generate(self, prompt: str, n: int, seed: int) -> list[GeneratedImage]:
        body = _post_with_retry(
            f"{self.base_url}/generate", {"prompt": prompt, "n": n, "seed": seed},
            self.backoff_s, GeneratorUnavailable, self.timeout,
        )
        images = []
        for rec, img_seed in zip(body["images"], body["seeds"]):
            if "b64" in rec:
                data = base64.b64decode(rec["b64"])
            else:
                with open(rec["path"], "rb") as fh:
                    data = fh.read()
            images.append(
                GeneratedImage(
                    data=data,
                    format=rec.get("format", "bin"),
                    seed=int(img_seed),
                    width=int(rec.get("width", 0)),
                    height=int(rec.get("height", 0)),
                )
            )
        return images


@dataclass(frozen=True)
class Providers:
    """The backend pair the replay pipeline consumes."""

    embedder: EmbeddingProvider
    generator: ImageGenerator

    @classmethod
    def mock(cls, seed: int = 0) -> "Providers":
        return cls(embedder=MockEmbedder(seed=seed), generator=MockGenerator())

    @classmethod
    def http(cls, base_url: str) -> "Providers":
        return cls(embedder=HttpEmbedder(base_url), generator=HttpGenerator(base_url))
