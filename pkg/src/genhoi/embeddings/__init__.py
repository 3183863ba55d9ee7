from genhoi.embeddings.classifier import Classifier, cosine_scores, init_classifier
from genhoi.embeddings.mimic import TeacherEmbedding, mimic_loss
from genhoi.embeddings.prompts import hoi_prompt, object_prompt
from genhoi.embeddings.providers import (
    EmbeddingProvider,
    FileEmbeddingProvider,
    SyntheticTextProvider,
    create_provider,
    synthetic_text_provider,
)
from genhoi.embeddings.store import load_embedding_matrix, save_embedding_matrix

__all__ = [
    "Classifier",
    "EmbeddingProvider",
    "FileEmbeddingProvider",
    "SyntheticTextProvider",
    "TeacherEmbedding",
    "cosine_scores",
    "create_provider",
    "hoi_prompt",
    "init_classifier",
    "load_embedding_matrix",
    "mimic_loss",
    "object_prompt",
    "save_embedding_matrix",
    "synthetic_text_provider",
]
