"""Text/image embedding providers.

``synthetic`` stands in for a CLIP text encoder: every token gets a fixed
random unit vector derived from ``(seed, token)`` and prompts are composed from
their verb, object and context tokens, so triplets that share a verb or an
object get correlated embeddings. ``file`` serves embeddings exported by an
external CLIP run.
"""

from __future__ import annotations

import hashlib
import re
from abc import ABC, abstractmethod
from functools import lru_cache
from pathlib import Path
from typing import ClassVar

import numpy as np
from PIL import Image

from genhoi.config import EmbeddingConfig
from genhoi.embeddings.prompts import read_prompts
from genhoi.embeddings.store import load_embedding_matrix
from genhoi.errors import EmbeddingError
from genhoi.registry import ProviderRegistry
from genhoi.utils.logging import get_logger

logger = get_logger(__name__)

NO_INTERACTION_PATTERN = re.compile(r"^A photo of a person and (?:a|an) (?P<object>.+)$")
HOI_PATTERN = re.compile(r"^A photo of a person (?P<verb>.+?) (?:a|an) (?P<object>.+)$")
NO_INTERACTION_VERB = "no_interaction"
OBJECT_PATTERN = re.compile(r"^A photo of (?:a|an) (?P<object>.+)$")

IMAGE_GRID = 16


def _unit(vector: np.ndarray) -> np.ndarray:
    return (vector / np.linalg.norm(vector)).astype(np.float32)


def parse_hoi_prompt(prompt: str) -> tuple[str, str] | None:
    """``(verb, object)`` of an HOI prompt; the person-and-object form maps to no_interaction."""
    match = NO_INTERACTION_PATTERN.match(prompt)
    if match:
        return NO_INTERACTION_VERB, match["object"]
    match = HOI_PATTERN.match(prompt)
    if match:
        return match["verb"], match["object"]
    return None


class EmbeddingProvider(ABC):
    PROVIDER_NAME: ClassVar[str] = "base"

    @property
    @abstractmethod
    def dim(self) -> int: ...

    @abstractmethod
    def embed_text(self, prompt: str) -> np.ndarray:
        """Unit-norm embedding of ``prompt`` (float32, length ``dim``)."""

    @abstractmethod
    def embed_image(self, image: np.ndarray) -> np.ndarray:
        """Unit-norm embedding of an H x W x 3 image in [0, 1]."""

    def embed_texts(self, prompts: list[str]) -> np.ndarray:
        return np.stack([self.embed_text(p) for p in prompts])

    @classmethod
    @abstractmethod
    def from_config(cls, config: EmbeddingConfig) -> EmbeddingProvider:
        """Build the provider from the run's embedding section."""


@ProviderRegistry.register
class SyntheticTextProvider(EmbeddingProvider):
    PROVIDER_NAME: ClassVar[str] = "synthetic"

    def __init__(
        self,
        seed: int = 0,
        dim: int = 64,
        verb_weight: float = 1.0,
        object_weight: float = 1.0,
        context_weight: float = 0.5,
    ) -> None:
        if dim < 8:
            raise ValueError(f"Synthetic embeddings need dim >= 8, got {dim}")
        self.seed = seed
        self._dim = dim
        self.verb_weight = verb_weight
        self.object_weight = object_weight
        self.context_weight = context_weight
        self._token = lru_cache(maxsize=None)(self._token_vector)

    @property
    def dim(self) -> int:
        return self._dim

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(f"{self.seed}\x1f{token}".encode(), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        v = rng.standard_normal(self._dim)
        return v / np.linalg.norm(v)

    def embed_text(self, prompt: str) -> np.ndarray:
        parsed = parse_hoi_prompt(prompt)
        if parsed:
            verb, obj = parsed
            v = (
                self.verb_weight * self._token(f"verb:{verb}")
                + self.object_weight * self._token(f"object:{obj}")
                + self.context_weight * self._token("person")
            )
            return _unit(v)
        match = OBJECT_PATTERN.match(prompt)
        if match:
            v = self._token(f"object:{match['object']}") + self.context_weight * self._token(
                "photo"
            )
            return _unit(v)
        return _unit(self._token(f"text:{prompt}"))

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        pixels = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
        grey = Image.fromarray(pixels).convert("L").resize(
            (IMAGE_GRID, IMAGE_GRID), Image.Resampling.BILINEAR
        )
        x = np.asarray(grey, dtype=np.float64).ravel() / 255.0 - 0.5
        v = self._projection() @ x
        norm = np.linalg.norm(v)
        if norm == 0:
            return _unit(self._token("image:blank"))
        return (v / norm).astype(np.float32)

    def _projection(self) -> np.ndarray:
        if not hasattr(self, "_proj"):
            digest = hashlib.blake2b(f"{self.seed}\x1fimage".encode(), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            self._proj = rng.standard_normal((self._dim, IMAGE_GRID * IMAGE_GRID))
        return self._proj

    @classmethod
    def from_config(cls, config: EmbeddingConfig) -> SyntheticTextProvider:
        return cls(
            seed=config.seed,
            dim=config.dim,
            verb_weight=config.mix_verb,
            object_weight=config.mix_object,
            context_weight=config.mix_context,
        )


@ProviderRegistry.register
class FileEmbeddingProvider(EmbeddingProvider):
    """Serves precomputed text embeddings looked up by exact prompt."""

    PROVIDER_NAME: ClassVar[str] = "file"

    def __init__(self, prompts: list[str], matrix: np.ndarray) -> None:
        if len(prompts) != matrix.shape[0]:
            raise EmbeddingError(
                f"{len(prompts)} prompts but {matrix.shape[0]} embedding rows"
            )
        self._dim = int(matrix.shape[1])
        self._table = {p: matrix[i].astype(np.float32) for i, p in enumerate(prompts)}

    @property
    def dim(self) -> int:
        return self._dim

    def embed_text(self, prompt: str) -> np.ndarray:
        try:
            return self._table[prompt]
        except KeyError:
            raise EmbeddingError(f"No stored embedding for prompt {prompt!r}", prompt) from None

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        raise EmbeddingError("The file provider has no image encoder; use a teacher file")

    @classmethod
    def from_store(cls, store_dir: Path) -> FileEmbeddingProvider:
        """Load every ``<name>.emb`` / ``<name>.txt`` pair found in ``store_dir``."""
        prompts: list[str] = []
        rows: list[np.ndarray] = []
        for emb in sorted(store_dir.glob("*.emb")):
            text = emb.with_suffix(".txt")
            if not text.exists():
                raise EmbeddingError(f"Missing prompt list {text} for {emb}")
            matrix = load_embedding_matrix(emb, normalize=True)
            names = read_prompts(text)
            if len(names) != matrix.shape[0]:
                raise EmbeddingError(
                    f"{text} lists {len(names)} prompts, {emb} has {matrix.shape[0]} rows"
                )
            prompts.extend(names)
            rows.append(matrix)
        if not rows:
            raise EmbeddingError(f"No embedding files in {store_dir}")
        return cls(prompts, np.concatenate(rows, axis=0))

    @classmethod
    def from_config(cls, config: EmbeddingConfig) -> FileEmbeddingProvider:
        if config.store_dir is None:
            raise EmbeddingError("The file provider needs embedding.store_dir")
        provider = cls.from_store(config.store_dir)
        if provider.dim != config.dim:
            raise EmbeddingError(
                f"Stored embeddings have dim {provider.dim}, config says {config.dim}"
            )
        return provider


def synthetic_text_provider(
    seed: int, c_t: int, a: float = 1.0, b: float = 1.0, c: float = 0.5
) -> SyntheticTextProvider:
    return SyntheticTextProvider(
        seed=seed, dim=c_t, verb_weight=a, object_weight=b, context_weight=c
    )


def create_provider(config: EmbeddingConfig) -> EmbeddingProvider:
    return ProviderRegistry.create(config)
