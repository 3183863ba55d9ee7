"""Text-embedding classifiers scored by scaled cosine similarity."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import torch
from torch import nn

from genhoi.embeddings.providers import EmbeddingProvider
from genhoi.errors import EmbeddingError, GenHOIError, ShapeError

DEFAULT_THETA = 100.0


class Classifier(nn.Module):
    """One unit-norm embedding row per category plus a fixed logit scale.

    Frozen classifiers keep ``weight`` as a buffer so no optimizer can touch it.
    ``active_rows`` restricts the output to a category subset while training;
    evaluation always scores every row.
    """

    weight: torch.Tensor
    theta: torch.Tensor

    def __init__(
        self, weight: torch.Tensor, theta: float = DEFAULT_THETA, trainable: bool = True
    ) -> None:
        super().__init__()
        if weight.ndim != 2 or weight.shape[0] == 0:
            raise ShapeError(
                f"Classifier weight must be a non-empty matrix, got {tuple(weight.shape)}"
            )
        self.trainable = trainable
        if trainable:
            self.weight = nn.Parameter(weight.clone())
        else:
            self.register_buffer("weight", weight.clone())
        self.register_buffer("theta", torch.tensor(float(theta), dtype=weight.dtype))
        self.active_rows: list[int] | None = None

    @property
    def num_rows(self) -> int:
        return int(self.weight.shape[0])

    @property
    def dim(self) -> int:
        return int(self.weight.shape[1])

    def set_active_rows(self, rows: Sequence[int] | None) -> None:
        if rows is not None:
            rows = sorted(rows)
            if not rows or rows[0] < 0 or rows[-1] >= self.num_rows:
                raise ShapeError(f"active_rows out of range for {self.num_rows} rows")
        self.active_rows = None if rows is None else list(rows)

    def output_rows(self) -> list[int] | None:
        """Rows produced by ``forward`` in the current mode, ``None`` for all."""
        if self.training and self.active_rows is not None:
            return self.active_rows
        return None

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        weight = self.weight
        rows = self.output_rows()
        if rows is not None:
            weight = weight[rows]
        if features.shape[-1] != weight.shape[-1]:
            raise ShapeError(
                f"Feature dim {features.shape[-1]} does not match classifier dim {weight.shape[-1]}"
            )
        v = nn.functional.normalize(features, dim=-1)
        w = nn.functional.normalize(weight, dim=-1)
        return self.theta * v @ w.transpose(0, 1)

    def extra_repr(self) -> str:
        return (
            f"rows={self.num_rows}, dim={self.dim}, "
            f"theta={float(self.theta)}, trainable={self.trainable}"
        )


def cosine_scores(v: torch.Tensor, cls: Classifier) -> torch.Tensor:
    """``theta * cos(v, w_j)`` for every (active) row ``j``.

    Raises:
        ShapeError: If ``v`` has zero norm or the wrong dimension.
    """
    if torch.any(torch.linalg.vector_norm(v, dim=-1) == 0):
        raise ShapeError("Cosine similarity is undefined for a zero-norm feature")
    return cls(v)


def init_classifier(
    prompts: Sequence[str],
    provider: EmbeddingProvider,
    theta: float = DEFAULT_THETA,
    trainable: bool = True,
    dtype: torch.dtype = torch.float32,
) -> Classifier:
    """Build a classifier whose row ``j`` is ``provider.embed_text(prompts[j])``."""
    if not prompts:
        raise ValueError("init_classifier needs at least one prompt")
    rows = []
    for prompt in prompts:
        try:
            rows.append(provider.embed_text(prompt))
        except EmbeddingError:
            raise
        except (GenHOIError, ValueError, KeyError) as e:
            raise EmbeddingError(f"Provider failed on prompt {prompt!r}: {e}", prompt) from e
    weight = torch.from_numpy(np.stack(rows).astype(np.float64)).to(dtype)
    return Classifier(weight, theta=theta, trainable=trainable)


def random_classifier(
    num_rows: int,
    dim: int,
    generator: torch.Generator,
    theta: float = DEFAULT_THETA,
    trainable: bool = True,
    dtype: torch.dtype = torch.float32,
) -> Classifier:
    """Random unit-norm rows; the no-text baseline."""
    weight = torch.randn(num_rows, dim, generator=generator, dtype=torch.float64)
    weight = nn.functional.normalize(weight, dim=-1).to(dtype)
    return Classifier(weight, theta=theta, trainable=trainable)


def replace_rows(cls: Classifier, rows: Sequence[int], generator: torch.Generator) -> None:
    """Overwrite ``rows`` with random unit vectors in place."""
    if not rows:
        return
    with torch.no_grad():
        fresh = torch.randn(len(rows), cls.dim, generator=generator, dtype=torch.float64)
        cls.weight[list(rows)] = nn.functional.normalize(fresh, dim=-1).to(cls.weight.dtype)
