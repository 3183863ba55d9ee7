"""Global visual-embedding mimic loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch

from genhoi.config import MimicNorm
from genhoi.errors import ShapeError

NORM_TOLERANCE = 1e-5


@dataclass(frozen=True)
class TeacherEmbedding:
    vector: np.ndarray
    source: Literal["synthetic", "file"] = "synthetic"

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ShapeError(f"Teacher embedding must be unit-norm, got norm {norm:.6f}")


def mimic_loss(
    teacher: torch.Tensor | TeacherEmbedding,
    features: torch.Tensor,
    norm: MimicNorm | str = MimicNorm.L1,
) -> torch.Tensor:
    """Distance between the teacher embedding and the mean-pooled query features.

    ``features`` is ``(N_q, c_t)`` or batched ``(B, N_q, c_t)`` with ``teacher``
    ``(c_t,)`` or ``(B, c_t)``. The distance is a mean over dimensions, then over
    the batch.
    """
    if isinstance(teacher, TeacherEmbedding):
        teacher = torch.as_tensor(teacher.vector, dtype=features.dtype, device=features.device)
    if features.ndim == 2:
        features = features.unsqueeze(0)
        teacher = teacher.reshape(1, -1)
    if features.ndim != 3 or features.shape[1] < 1:
        raise ShapeError(
            f"Expected (N_q, c_t) or (B, N_q, c_t) features, got {tuple(features.shape)}"
        )
    if teacher.ndim == 1:
        teacher = teacher.unsqueeze(0).expand(features.shape[0], -1)
    if teacher.shape != (features.shape[0], features.shape[2]):
        raise ShapeError(
            f"Teacher shape {tuple(teacher.shape)} does not match features {tuple(features.shape)}"
        )
    diff = teacher - features.mean(dim=1)
    norm = MimicNorm(norm)
    if norm is MimicNorm.L1:
        per_sample = diff.abs().mean(dim=-1)
    elif norm is MimicNorm.L2:
        per_sample = diff.pow(2).mean(dim=-1)
    else:
        per_sample = diff.abs().mean(dim=-1) + diff.pow(2).mean(dim=-1)
    return per_sample.mean()
