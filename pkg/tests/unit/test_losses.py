"""Unit tests for the set-prediction losses."""

from __future__ import annotations

import math

import torch
from torch.nn import functional as F

from genhoi.config import LossWeights, MimicNorm
from genhoi.model.gen import GEN, LayerPrediction
from genhoi.training.losses import TERMS, compute_losses, focal_loss, layer_losses
from genhoi.training.matcher import MatchResult
from genhoi.training.targets import ImageTarget


def _target(num_columns: int = 12) -> ImageTarget:
    interactions = torch.zeros(1, num_columns)
    interactions[0, 3] = 1.0
    return ImageTarget(
        human_boxes=torch.tensor([[0.3, 0.35, 0.25, 0.4]]),
        object_boxes=torch.tensor([[0.65, 0.6, 0.2, 0.2]]),
        object_labels=torch.tensor([1]),
        interactions=interactions,
    )


def _images() -> torch.Tensor:
    return torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(0))


class TestFocalLoss:
    """Tests for focal_loss()."""

    def test_confident_correct_is_small(self) -> None:
        """Should be near zero for confident correct logits."""
        logits = torch.tensor([8.0, -8.0])
        targets = torch.tensor([1.0, 0.0])
        assert float(focal_loss(logits, targets).sum()) < 1e-6

    def test_gamma_zero_is_weighted_bce(self) -> None:
        """Should reduce to alpha-weighted BCE when gamma is zero."""
        logits = torch.tensor([0.3, -1.2])
        targets = torch.tensor([1.0, 0.0])
        bce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
        expected = bce * torch.tensor([0.25, 0.75])
        torch.testing.assert_close(focal_loss(logits, targets, gamma=0.0), expected)


class TestLayerLosses:
    """Tests for layer_losses()."""

    def test_exact_boxes_have_zero_box_terms(self) -> None:
        """Should give zero L1 and GIoU terms when the matched boxes are exact."""
        target = _target()
        prediction = LayerPrediction(
            human_boxes=target.human_boxes.unsqueeze(0).repeat(1, 3, 1),
            object_boxes=target.object_boxes.unsqueeze(0).repeat(1, 3, 1),
            object_logits=torch.zeros(1, 3, 5),
            interaction_logits=torch.zeros(1, 3, 12),
        )
        match = MatchResult(pairs=((1, 0),), unmatched_queries=frozenset({0, 2}), total_cost=0.0)
        terms = layer_losses(prediction, [target], [match], LossWeights())
        assert set(terms) == set(TERMS)
        for name in ("box_h", "box_o", "giou_h", "giou_o"):
            assert abs(float(terms[name])) < 1e-6

    def test_unmatched_queries_target_no_object(self) -> None:
        """Should push unmatched queries to the no-object class."""
        target = _target()
        logits = torch.zeros(1, 2, 5)
        logits[0, 1, -1] = 10.0
        logits[0, 0, 1] = 10.0
        prediction = LayerPrediction(
            human_boxes=target.human_boxes.unsqueeze(0).repeat(1, 2, 1),
            object_boxes=target.object_boxes.unsqueeze(0).repeat(1, 2, 1),
            object_logits=logits,
            interaction_logits=torch.zeros(1, 2, 12),
        )
        right = MatchResult(pairs=((0, 0),), unmatched_queries=frozenset({1}), total_cost=0.0)
        wrong = MatchResult(pairs=((1, 0),), unmatched_queries=frozenset({0}), total_cost=0.0)
        good = layer_losses(prediction, [target], [right], LossWeights())["cls_o"]
        bad = layer_losses(prediction, [target], [wrong], LossWeights())["cls_o"]
        assert float(good) < 1e-3
        assert float(bad) > 1.0

    def test_empty_image(self) -> None:
        """Should give zero box terms and finite class terms without ground truth."""
        empty = ImageTarget(
            human_boxes=torch.zeros(0, 4),
            object_boxes=torch.zeros(0, 4),
            object_labels=torch.zeros(0, dtype=torch.long),
            interactions=torch.zeros(0, 12),
        )
        prediction = LayerPrediction(
            human_boxes=torch.full((1, 2, 4), 0.5),
            object_boxes=torch.full((1, 2, 4), 0.5),
            object_logits=torch.zeros(1, 2, 5),
            interaction_logits=torch.zeros(1, 2, 12),
        )
        match = MatchResult(pairs=(), unmatched_queries=frozenset({0, 1}), total_cost=0.0)
        terms = layer_losses(prediction, [empty], [match], LossWeights())
        assert float(terms["box_h"]) == 0.0
        assert float(terms["giou_o"]) == 0.0
        assert all(math.isfinite(float(v)) for v in terms.values())


class TestComputeLosses:
    """Tests for compute_losses()."""

    def test_total_sums_layers_and_mimic(self, tiny_model: GEN) -> None:
        """Should add every layer's weighted cost and the weighted mimic term."""
        output = tiny_model.train()(_images())
        teacher = F.normalize(torch.randn(1, 16, generator=torch.Generator().manual_seed(1)), dim=-1)
        weights = LossWeights()
        losses = compute_losses(output, [_target()], weights, teacher=teacher)
        assert len(losses.layers) == len(output.layers) == 2
        assert losses.mimic is not None and losses.total is not None
        expected = torch.stack(losses.layer_costs).sum() + weights.lambda_mimic * losses.mimic
        torch.testing.assert_close(losses.total, expected)

    def test_without_teacher(self, tiny_model: GEN) -> None:
        """Should skip the mimic term when no teacher is given."""
        losses = compute_losses(tiny_model(_images()), [_target()], LossWeights())
        summary = losses.summary()
        assert losses.mimic is None
        assert summary["mimic"] == 0.0
        assert set(summary) == {*TERMS, "mimic", "total"}

    def test_l2_mimic_norm(self, tiny_model: GEN) -> None:
        """Should accept the L2 distance for the mimic term."""
        teacher = torch.zeros(1, 16)
        losses = compute_losses(
            tiny_model(_images()),
            [_target()],
            LossWeights(),
            teacher=teacher,
            mimic_norm=MimicNorm.L2,
        )
        assert losses.mimic is not None
        assert float(losses.mimic) > 0.0

    def test_backward_reaches_parameters(self, tiny_model: GEN) -> None:
        """Should produce gradients for the decoder and heads."""
        losses = compute_losses(tiny_model.train()(_images()), [_target()], LossWeights())
        assert losses.total is not None
        losses.total.backward()
        grads = [p.grad for p in tiny_model.parameters() if p.requires_grad]
        assert any(g is not None and float(g.abs().sum()) > 0 for g in grads)
