"""Teacher embeddings for the mimic loss."""

from __future__ import annotations

from collections.abc import Collection
from pathlib import Path

import numpy as np

from genhoi.data.manifest import SceneSample
from genhoi.embeddings.mimic import TeacherEmbedding
from genhoi.embeddings.prompts import BACKGROUND_PROMPT, hoi_prompt, read_prompts
from genhoi.embeddings.providers import EmbeddingProvider
from genhoi.embeddings.store import load_embedding_matrix
from genhoi.errors import EmbeddingError
from genhoi.label_space import LabelSpace

TEACHER_DIR = "teacher"
TEACHER_MATRIX = "images.emb"
TEACHER_IDS = "images.txt"


def synthetic_teacher(
    sample: SceneSample,
    provider: EmbeddingProvider,
    ls: LabelSpace,
    allowed: Collection[int] | None = None,
) -> TeacherEmbedding:
    """Normalized mean of the text embeddings of the sample's HOI labels.

    Labels outside ``allowed`` are ignored. With no labels left the embedding of
    a fixed background prompt is used.
    """
    hoi_ids = [h for h in sample.hoi_ids if allowed is None or h in allowed]
    if not hoi_ids:
        vector = provider.embed_text(BACKGROUND_PROMPT).astype(np.float64)
    else:
        rows = [
            provider.embed_text(hoi_prompt(ls.verbs[t.verb_id], ls.objects[t.object_id]))
            for t in (ls.triplets[h] for h in hoi_ids)
        ]
        vector = np.mean(np.stack(rows).astype(np.float64), axis=0)
    vector = vector / np.linalg.norm(vector)
    return TeacherEmbedding(vector=vector.astype(np.float32), source="synthetic")


class FileTeacher:
    """Per-image teacher embeddings exported by an external image encoder.

    ``<store>/teacher/images.emb`` holds one row per image id listed in
    ``images.txt``.
    """

    def __init__(self, image_ids: list[str], matrix: np.ndarray) -> None:
        if len(image_ids) != matrix.shape[0]:
            raise EmbeddingError(f"{len(image_ids)} image ids but {matrix.shape[0]} rows")
        self._rows = {image_id: matrix[i] for i, image_id in enumerate(image_ids)}

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._rows

    def __call__(self, image_id: str) -> TeacherEmbedding:
        try:
            return TeacherEmbedding(vector=self._rows[image_id], source="file")
        except KeyError:
            raise EmbeddingError(f"No teacher embedding for image {image_id!r}") from None

    @classmethod
    def from_store(cls, store_dir: Path) -> FileTeacher | None:
        folder = store_dir / TEACHER_DIR
        if not (folder / TEACHER_MATRIX).exists():
            return None
        matrix = load_embedding_matrix(folder / TEACHER_MATRIX, normalize=True)
        return cls(read_prompts(folder / TEACHER_IDS), matrix)
