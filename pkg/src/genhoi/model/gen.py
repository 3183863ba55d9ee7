"""Guided-embedding network: instance decoder with paired human/object queries,
interaction decoder driven by queries built from the instance features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from genhoi.config import ClassifierMode, ModelConfig, RunConfig
from genhoi.embeddings.classifier import (
    Classifier,
    init_classifier,
    random_classifier,
)
from genhoi.embeddings.prompts import hoi_prompts, object_prompts
from genhoi.embeddings.providers import EmbeddingProvider
from genhoi.errors import ShapeError
from genhoi.label_space import LabelSpace
from genhoi.model.encoder import VisualEncoder, VisualFeatures
from genhoi.model.layers import MLP, DecoderLayer
from genhoi.utils.logging import get_logger

logger = get_logger(__name__)

InstanceHeads = tuple[torch.Tensor, torch.Tensor, torch.Tensor]


@dataclass
class LayerPrediction:
    """Head outputs of one decoder layer. Boxes are normalized ``cx, cy, w, h``."""

    human_boxes: torch.Tensor
    object_boxes: torch.Tensor
    object_logits: torch.Tensor
    interaction_logits: torch.Tensor


@dataclass
class LayerOutputs:
    """Per-layer query features, each ``(B, N_q, C)``."""

    human: list[torch.Tensor] = field(default_factory=list)
    object: list[torch.Tensor] = field(default_factory=list)
    interaction_queries: list[torch.Tensor] = field(default_factory=list)
    interaction: list[torch.Tensor] = field(default_factory=list)


@dataclass
class GENOutput:
    layers: list[LayerPrediction]
    features: LayerOutputs
    interaction_embeddings: torch.Tensor
    """Last-layer interaction features in the text-embedding space, for the mimic loss."""
    interaction_columns: list[int] | None = None
    """HOI (or verb) ids of the interaction logit columns; ``None`` means all of them."""

    @property
    def last(self) -> LayerPrediction:
        return self.layers[-1]


class QueryBank(nn.Module):
    """Human, object and position-guided query embeddings.

    Without position guidance a single unified query set serves both branches.
    """

    def __init__(self, num_queries: int, dim: int, use_pge: bool = True) -> None:
        super().__init__()
        self.use_pge = use_pge
        if use_pge:
            self.human = nn.Parameter(torch.randn(num_queries, dim))
            self.object = nn.Parameter(torch.randn(num_queries, dim))
            self.position = nn.Parameter(torch.randn(num_queries, dim))
        else:
            self.unified = nn.Parameter(torch.randn(num_queries, dim))

    @property
    def num_queries(self) -> int:
        return int((self.human if self.use_pge else self.unified).shape[0])


def build_instance_queries(bank: QueryBank) -> torch.Tensor:
    """``[Q_h + P_q, Q_o + P_q]`` stacked to ``(2 N_q, C)``, or ``[Q_u, Q_u]``."""
    if bank.use_pge:
        return torch.cat((bank.human + bank.position, bank.object + bank.position), dim=0)
    return torch.cat((bank.unified, bank.unified), dim=0)


def make_interaction_queries(human: torch.Tensor, obj: torch.Tensor) -> torch.Tensor:
    if human.shape != obj.shape:
        raise ShapeError(f"Human {tuple(human.shape)} and object {tuple(obj.shape)} differ")
    return (human + obj) / 2


class GEN(nn.Module):
    def __init__(
        self,
        config: ModelConfig,
        ls: LabelSpace,
        *,
        interaction_classifier: Classifier | None,
        object_classifier: Classifier | None,
        embed_dim: int,
    ) -> None:
        super().__init__()
        self.config = config
        self.num_objects = ls.num_objects
        self.num_triplets = ls.num_triplets
        self.num_verbs = ls.num_verbs
        dim = config.hidden_dim
        self.embed_dim = embed_dim

        self.encoder = VisualEncoder(config)
        self.queries = QueryBank(config.num_queries, dim, config.use_pge)
        self.instance_layers = nn.ModuleList(
            DecoderLayer(dim, config.num_heads, config.ffn_dim, config.activation)
            for _ in range(config.num_decoder_layers)
        )
        self.interaction_layers = nn.ModuleList(
            DecoderLayer(dim, config.num_heads, config.ffn_dim, config.activation)
            for _ in range(config.num_decoder_layers)
        )
        if not config.use_ige:
            self.interaction_embed = nn.Parameter(torch.randn(config.num_queries, dim))

        self.human_box_head = MLP(dim, dim, 4, 3, config.activation)
        self.object_box_head = MLP(dim, dim, 4, 3, config.activation)

        self.object_classifier = object_classifier
        if object_classifier is not None:
            text_dim = object_classifier.dim
            self.object_proj: nn.Module = (
                nn.Identity() if dim == text_dim else nn.Linear(dim, text_dim)
            )
            no_object = torch.randn(object_classifier.dim)
            self.no_object = nn.Parameter(no_object / no_object.norm())
        else:
            self.object_head = nn.Linear(dim, ls.num_objects + 1)

        self.interaction_proj: nn.Module = (
            nn.Identity() if dim == embed_dim else nn.Linear(dim, embed_dim)
        )
        if config.classifier_mode is ClassifierMode.TRIPLET:
            if interaction_classifier is None:
                raise ShapeError("Triplet mode needs an interaction classifier")
            if interaction_classifier.num_rows != ls.num_triplets:
                raise ShapeError(
                    f"Interaction classifier has {interaction_classifier.num_rows} rows, "
                    f"label space has {ls.num_triplets} triplets"
                )
            self.interaction_classifier: Classifier | None = interaction_classifier
        else:
            self.interaction_classifier = None
            self.verb_head = nn.Linear(dim, ls.num_verbs)

    def encode(self, images: torch.Tensor) -> VisualFeatures:
        return self.encoder(images)

    def decode_instances(
        self, visual: VisualFeatures
    ) -> tuple[list[torch.Tensor], list[torch.Tensor], list[InstanceHeads]]:
        """Run the instance decoder.

        Returns per-layer human features, object features and
        ``(human_boxes, object_boxes, object_logits)`` head outputs.
        """
        batch = visual.tokens.shape[0]
        n_q = self.config.num_queries
        tgt = build_instance_queries(self.queries).unsqueeze(0).expand(batch, -1, -1)
        humans, objects, heads = [], [], []
        for layer in self.instance_layers:
            tgt = layer(tgt, visual.tokens, visual.pos)
            v_h, v_o = tgt[:, :n_q], tgt[:, n_q:]
            humans.append(v_h)
            objects.append(v_o)
            heads.append(
                (
                    self.human_box_head(v_h).sigmoid(),
                    self.object_box_head(v_o).sigmoid(),
                    self.object_logits(v_o),
                )
            )
        return humans, objects, heads

    def object_logits(self, v_o: torch.Tensor) -> torch.Tensor:
        """``(B, N_q, N_o + 1)`` logits; the last column is no-object."""
        if self.object_classifier is None:
            return self.object_head(v_o)
        projected = self.object_proj(v_o)
        real = self.object_classifier(projected)
        no_object = nn.functional.normalize(self.no_object, dim=0)
        unit = nn.functional.normalize(projected, dim=-1)
        none = self.object_classifier.theta * (unit @ no_object)
        return torch.cat((real, none.unsqueeze(-1)), dim=-1)

    def interaction_query(self, v_h: torch.Tensor, v_o: torch.Tensor) -> torch.Tensor:
        if self.config.use_ige:
            return make_interaction_queries(v_h, v_o)
        embed = self.interaction_embed
        if self.queries.use_pge:
            embed = embed + self.queries.position
        return embed.unsqueeze(0).expand(v_h.shape[0], -1, -1)

    def decode_interactions(
        self, visual: VisualFeatures, humans: list[torch.Tensor], objects: list[torch.Tensor]
    ) -> tuple[list[torch.Tensor], list[torch.Tensor], list[torch.Tensor]]:
        """Run the interaction decoder; layer ``k`` consumes ``V_a[k-1] + Q_a[k]``.

        Returns per-layer interaction queries, features and logits.
        """
        if len(humans) != len(self.interaction_layers):
            raise ShapeError(
                f"{len(humans)} instance layers for "
                f"{len(self.interaction_layers)} interaction layers"
            )
        queries, features, logits = [], [], []
        state: torch.Tensor | None = None
        for layer, v_h, v_o in zip(self.interaction_layers, humans, objects, strict=True):
            q_a = self.interaction_query(v_h, v_o)
            state = layer(q_a if state is None else state + q_a, visual.tokens, visual.pos)
            queries.append(q_a)
            features.append(state)
            logits.append(self.interaction_logits(state))
        return queries, features, logits

    def interaction_logits(self, v_a: torch.Tensor) -> torch.Tensor:
        if self.interaction_classifier is None:
            return self.verb_head(v_a)
        return self.interaction_classifier(self.interaction_proj(v_a))

    def forward(self, images: torch.Tensor) -> GENOutput:
        visual = self.encode(images)
        humans, objects, heads = self.decode_instances(visual)
        queries, interactions, logits = self.decode_interactions(visual, humans, objects)
        layers = [
            LayerPrediction(
                human_boxes=h_box, object_boxes=o_box, object_logits=o_logits, interaction_logits=a
            )
            for (h_box, o_box, o_logits), a in zip(heads, logits, strict=True)
        ]
        columns = None
        if self.interaction_classifier is not None:
            columns = self.interaction_classifier.output_rows()
        return GENOutput(
            layers=layers,
            features=LayerOutputs(
                human=humans, object=objects, interaction_queries=queries, interaction=interactions
            ),
            interaction_embeddings=self.interaction_proj(interactions[-1]),
            interaction_columns=columns,
        )

    def classifier_parameters(self) -> list[nn.Parameter]:
        """Trainable text-initialized classifier rows (fine-tuned at a low rate)."""
        params = []
        for cls in (self.interaction_classifier, self.object_classifier):
            if cls is not None and cls.trainable:
                params.append(cls.weight)
        return params


def build_classifiers(
    config: RunConfig,
    ls: LabelSpace,
    provider: EmbeddingProvider | None,
    *,
    frozen: bool = False,
) -> tuple[Classifier | None, Classifier | None]:
    """Interaction and object classifiers for ``config``.

    Text-initialized rows come from ``provider``. With the text ablated, or with
    no provider (a model about to receive checkpoint weights), rows are random
    unit vectors. Zero-shot runs pass ``frozen=True``.
    """
    theta = config.embedding.theta
    dim = provider.dim if provider is not None else config.embedding.dim
    generator = torch.Generator().manual_seed(config.seed)

    def _classifier(prompts: list[str], use_text: bool) -> Classifier:
        if use_text and provider is not None:
            return init_classifier(prompts, provider, theta, trainable=not frozen)
        return random_classifier(len(prompts), dim, generator, theta, trainable=not frozen)

    interaction = None
    if config.model.classifier_mode is ClassifierMode.TRIPLET:
        interaction = _classifier(hoi_prompts(ls), config.ablation.use_interaction_text)
    obj = None
    if config.ablation.use_object_text:
        obj = _classifier(object_prompts(ls), True)
    return interaction, obj


def build_model(
    config: RunConfig,
    ls: LabelSpace,
    provider: EmbeddingProvider | None = None,
    *,
    frozen_classifiers: bool | None = None,
) -> GEN:
    """Build a freshly initialized GEN for ``config``.

    Parameters are drawn after seeding torch with ``config.seed``.
    """
    frozen = config.split.zero_shot if frozen_classifiers is None else frozen_classifiers
    torch.manual_seed(config.seed)
    interaction, obj = build_classifiers(config, ls, provider, frozen=frozen)
    embed_dim = provider.dim if provider is not None else config.embedding.dim
    model = GEN(
        config.model,
        ls,
        interaction_classifier=interaction,
        object_classifier=obj,
        embed_dim=embed_dim,
    )
    logger.info(
        "Built GEN: %d parameters, %d decoder layers, %d queries",
        sum(p.numel() for p in model.parameters()),
        config.model.num_decoder_layers,
        config.model.num_queries,
        extra={"classifier_mode": str(config.model.classifier_mode), "frozen_classifiers": frozen},
    )
    return model
