"""Integer-only hash primitives behind the mock mode.

The scheme is part of the wire contract so that clients can verify
vectors and rasters by hand, and is bit-deterministic across platforms:

* ``expand(data, n)``: SHA-256 of ``data || counter_le4`` blocks,
  concatenated until ``n`` bytes are available.
* token vector: expand ``seed_le8 || token_utf8`` to ``dim`` 32-bit
  little-endian words; each word ``v`` maps to ``v / 2**32 * 2 - 1``.
* text embedding: sum of its whitespace tokens' vectors in order,
  L2-normalized; a text with no tokens stays the zero vector.
* placeholder image: binary PPM (P6) whose pixel stream is the expansion
  of ``seed_le8 || prompt_utf8``.
"""

from __future__ import annotations

import hashlib
import math


def expand(data: bytes, n_bytes: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < n_bytes:
        out.extend(hashlib.sha256(data + counter.to_bytes(4, "little")).digest())
        counter += 1
    return bytes(out[:n_bytes])


def token_vector(token: str, seed: int, dim: int) -> list[float]:
    raw = expand(seed.to_bytes(8, "little") + token.encode("utf-8"), dim * 4)
    return [
        int.from_bytes(raw[4 * i: 4 * i + 4], "little") / 2**32 * 2.0 - 1.0
        for i in range(dim)
    ]


def embed_text(text: str, seed: int, dim: int) -> list[float]:
    acc = [0.0] * dim
    for token in text.split():
        for i, v in enumerate(token_vector(token, seed, dim)):
            acc[i] += v
    norm = math.sqrt(sum(v * v for v in acc))
    if norm > 0.0:
        acc = [v / norm for v in acc]
    return acc


def ppm_image(prompt: str, seed: int, width: int, height: int) -> bytes:
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    body = expand(seed.to_bytes(8, "little", signed=True) + prompt.encode("utf-8"),
                  width * height * 3)
    return header + body
