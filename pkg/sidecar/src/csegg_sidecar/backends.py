"""Model backends: the deterministic mock and the real-model wrapper.

The real backend wraps a pretrained text encoder (mean pooling over token
vectors, masked by attention) and a text-to-image diffusion pipeline. It
loads lazily in a background thread and reports not-ready until both
models are up; model access is serialized through a bounded semaphore so
request handling stays stateless.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .hashing import embed_text, ppm_image

MOCK_DIM = 64
MOCK_IMAGE_SIZE = (64, 64)


@dataclass(frozen=True)
class GeneratedImage:
    data: bytes
    format: str
    seed: int
    width: int
    height: int


class MockBackend:
    """Bit-deterministic stand-in for both models (integer hash path)."""

    mode = "mock"

    def __init__(self, seed: int = 0, dim: int = MOCK_DIM,
                 image_size: tuple[int, int] = MOCK_IMAGE_SIZE):
        self.seed = seed
        self.dim = dim
        self.image_size = image_size

    @property
    def ready(self) -> bool:
        return True

    @property
    def models(self) -> dict:
        return {"embedding": "hash-bag-of-words", "generation": "hash-raster"}

    def embed(self, texts: list[str]) -> list[list[float]]:
        return [embed_text(t, self.seed, self.dim) for t in texts]

    def generate(self, prompt: str, n: int, seed: int) -> list[GeneratedImage]:
        w, h = self.image_size
        return [
            GeneratedImage(ppm_image(prompt, seed + i, w, h), "ppm", seed + i, w, h)
            for i in range(n)
        ]


@dataclass
class RealBackendConfig:
    embedding_model: str = "bert-base-uncased"
    generation_model: str = "stable-diffusion-v1-5/stable-diffusion-v1-5"
    image_size: tuple[int, int] = (512, 512)
    queue_depth: int = 1
    device: str = "cpu"


class RealBackend:
    """Wraps pretrained models; not ready until both finish loading.

    Embeddings use mean pooling over the encoder's final hidden states
    (masked by attention), the conventional sentence-vector choice.
    """

    mode = "real"

    def __init__(self, config: RealBackendConfig | None = None):
        self.config = config or RealBackendConfig()
        self._lock = threading.Semaphore(self.config.queue_depth)
        self._tokenizer = None
        self._encoder = None
        self._pipeline = None
        self._dim: int | None = None
        self._error: str | None = None
        self._loaded = threading.Event()
        threading.Thread(target=self._load, daemon=True).start()

    def _load(self) -> None:
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoTokenizer

            self._tokenizer = AutoTokenizer.from_pretrained(self.config.embedding_model)
            self._encoder = AutoModel.from_pretrained(self.config.embedding_model)
            self._encoder.eval()
            self._dim = int(self._encoder.config.hidden_size)
            from diffusers import StableDiffusionPipeline

            self._pipeline = StableDiffusionPipeline.from_pretrained(
                self.config.generation_model
            ).to(self.config.device)
        except Exception as e:  # stays not-ready; /health keeps returning 503
            self._error = f"{type(e).__name__}: {e}"
        finally:
            self._loaded.set()

    @property
    def ready(self) -> bool:
        return self._loaded.is_set() and self._error is None

    @property
    def error(self) -> str | None:
        return self._error

    @property
    def dim(self) -> int:
        if self._dim is None:
            raise RuntimeError("encoder not loaded")
        return self._dim

    @property
    def models(self) -> dict:
        return {
            "embedding": self.config.embedding_model,
            "generation": self.config.generation_model,
        }

    def embed(self, texts: list[str]) -> list[list[float]]:
        import torch

        with self._lock, torch.no_grad():
            batch = self._tokenizer(texts, return_tensors="pt", padding=True,
                                    truncation=True)
            hidden = self._encoder(**batch).last_hidden_state
            mask = batch["attention_mask"].unsqueeze(-1).float()
            pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1e-9)
            return [vec.tolist() for vec in pooled]

    def generate(self, prompt: str, n: int, seed: int) -> list[GeneratedImage]:
        import io

        import torch

        out = []
        with self._lock:
            for i in range(n):
                generator = torch.Generator(device=self.config.device).manual_seed(seed + i)
                image = self._pipeline(
                    prompt,
                    num_inference_steps=30,
                    generator=generator,
                    height=self.config.image_size[1],
                    width=self.config.image_size[0],
                ).images[0]
                buf = io.BytesIO()
                image.save(buf, format="PNG")
                out.append(
                    GeneratedImage(buf.getvalue(), "png", seed + i,
                                   image.width, image.height)
                )
        return out
