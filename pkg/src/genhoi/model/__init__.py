from genhoi.model.checkpoint import load_checkpoint, save_checkpoint
from genhoi.model.gen import (
    GEN,
    GENOutput,
    LayerOutputs,
    LayerPrediction,
    QueryBank,
    build_instance_queries,
    build_model,
    make_interaction_queries,
)

__all__ = [
    "GEN",
    "GENOutput",
    "LayerOutputs",
    "LayerPrediction",
    "QueryBank",
    "build_instance_queries",
    "build_model",
    "load_checkpoint",
    "make_interaction_queries",
    "save_checkpoint",
]
