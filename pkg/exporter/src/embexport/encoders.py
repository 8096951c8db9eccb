"""Encoder resolution.

Two families:

* ``hash:<dim>`` — a built-in deterministic hashed character-trigram
  encoder. No model weights, instant, stable across platforms; meant for
  tests, smoke runs, and wiring checks of downstream tooling.
* anything else — treated as a sentence-transformers checkpoint name or
  path (e.g. ``sentence-transformers/sentence-t5-large``). Pooling is
  whatever the checkpoint config defines.

Encoders expose ``dim`` and ``encode(texts, batch_size)`` returning a
float32 (n, dim) matrix. Raw pooled outputs are returned; normalization
is the exporter's job.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import EncoderError


class HashedTrigramEncoder:
    """Deterministic text embedding from hashed character trigrams."""

    def __init__(self, dim: int):
        if dim < 1:
            raise EncoderError(f"hash encoder dim must be >= 1, got {dim}")
        self.dim = dim
        self.name = f"hash:{dim}"

    def _embed_one(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        padded = f"\x02{text}\x03"  # guarantees >= 1 trigram for any text
        data = padded.encode("utf-8")
        if len(data) < 3:
            data = data + b"\x00" * (3 - len(data))
        for i in range(len(data) - 2):
            digest = hashlib.blake2b(data[i : i + 3], digest_size=8).digest()
            value = int.from_bytes(digest, "little")
            bucket = value % self.dim
            sign = 1.0 if (value >> 62) & 1 else -1.0
            vec[bucket] += sign
        return vec

    def encode(self, texts: list[str], batch_size: int = 32) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype="<f4")
        for i, text in enumerate(texts):
            out[i] = self._embed_one(text).astype("<f4")
        return out


class SentenceTransformerEncoder:
    """Thin wrapper over a sentence-transformers checkpoint."""

    def __init__(self, name_or_path: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EncoderError(
                f"encoder {name_or_path!r} needs the sentence-transformers package "
                "(pip install 'embexport[encoders]')"
            ) from exc
        try:
            self._model = SentenceTransformer(name_or_path)
        except Exception as exc:
            raise EncoderError(f"failed to load encoder {name_or_path!r}: {exc}") from exc
        self.name = name_or_path
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str], batch_size: int = 32) -> np.ndarray:
        out = self._model.encode(
            texts,
            batch_size=batch_size,
            convert_to_numpy=True,
            normalize_embeddings=False,
            show_progress_bar=False,
        )
        return np.asarray(out, dtype="<f4")


def resolve_encoder(spec: str):
    """``hash:<dim>`` builds the test encoder; anything else loads a checkpoint."""
    if spec.startswith("hash:"):
        try:
            dim = int(spec.split(":", 1)[1])
        except ValueError as exc:
            raise EncoderError(f"bad hash encoder spec {spec!r}") from exc
        return HashedTrigramEncoder(dim)
    return SentenceTransformerEncoder(spec)
