"""Unit tests for the bipartite matcher and its cost."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from torchvision.ops import box_convert, generalized_box_iou, sigmoid_focal_loss

from genhoi.config import LossWeights
from genhoi.errors import MatchingError
from genhoi.model.gen import LayerPrediction
from genhoi.oracles import brute_force_assignment, random_cost_matrices
from genhoi.training.matcher import cost_matrix, focal_cost, hungarian_match, match_layer, pair_cost
from genhoi.training.targets import ImageTarget


def _target(num_columns: int = 5) -> ImageTarget:
    interactions = torch.zeros(2, num_columns)
    interactions[0, 1] = 1.0
    interactions[1, 3] = 1.0
    return ImageTarget(
        human_boxes=torch.tensor([[0.3, 0.4, 0.2, 0.4], [0.7, 0.5, 0.2, 0.5]]),
        object_boxes=torch.tensor([[0.5, 0.5, 0.1, 0.1], [0.8, 0.6, 0.2, 0.2]]),
        object_labels=torch.tensor([0, 2]),
        interactions=interactions,
    )


def _prediction(n_q: int = 4, num_columns: int = 5, seed: int = 0) -> LayerPrediction:
    generator = torch.Generator().manual_seed(seed)
    return LayerPrediction(
        human_boxes=torch.rand(1, n_q, 4, generator=generator) * 0.5 + 0.25,
        object_boxes=torch.rand(1, n_q, 4, generator=generator) * 0.5 + 0.25,
        object_logits=torch.randn(1, n_q, 4, generator=generator),
        interaction_logits=torch.randn(1, n_q, num_columns, generator=generator),
    )


class TestHungarianMatch:
    """Tests for hungarian_match()."""

    def test_matches_exhaustive_minimum(self) -> None:
        """Should reach the brute-force minimum on random matrices."""
        for cost in random_cost_matrices(60, max_size=6, seed=11):
            result = hungarian_match(cost)
            assert math.isclose(result.total_cost, brute_force_assignment(cost), abs_tol=1e-9)

    def test_every_gt_matched_once(self) -> None:
        """Should match each ground truth to a distinct query."""
        cost = np.random.default_rng(0).random((6, 4))
        result = hungarian_match(cost)
        assert result.gt_indices == [0, 1, 2, 3]
        assert len(set(result.query_indices)) == 4
        assert result.unmatched_queries == frozenset(range(6)) - set(result.query_indices)

    def test_ties_pick_smallest_query_sequence(self) -> None:
        """Should return the lexicographically smallest optimal query sequence."""
        assert hungarian_match(np.zeros((3, 2))).pairs == ((0, 0), (1, 1))
        cost = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        assert hungarian_match(cost).query_indices == [1, 0]

    def test_empty_ground_truth(self) -> None:
        """Should leave every query unmatched when there is nothing to match."""
        result = hungarian_match(np.zeros((3, 0)))
        assert result.pairs == ()
        assert result.unmatched_queries == frozenset({0, 1, 2})
        assert result.total_cost == 0.0

    def test_accepts_tensors(self) -> None:
        """Should accept a torch cost matrix."""
        result = hungarian_match(torch.tensor([[2.0, 0.0], [0.0, 2.0]]))
        assert result.pairs == ((1, 0), (0, 1))
        assert result.total_cost == 0.0

    @pytest.mark.parametrize(
        "cost",
        [
            np.array([[0.0, math.nan]]).T,
            np.array([[math.inf], [0.0]]),
            np.zeros((1, 2)),
            np.zeros(3),
        ],
    )
    def test_rejects_bad_matrices(self, cost: np.ndarray) -> None:
        """Should raise MatchingError on non-finite costs, too few queries or wrong rank."""
        with pytest.raises(MatchingError):
            hungarian_match(cost)


class TestCost:
    """Tests for the matching cost terms."""

    def test_focal_cost_is_class_mean(self) -> None:
        """Should equal the class-mean elementwise focal loss of each query/target pair."""
        generator = torch.Generator().manual_seed(1)
        logits = torch.randn(3, 5, generator=generator, dtype=torch.float64)
        targets = (torch.rand(2, 5, generator=generator) > 0.5).to(torch.float64)
        cost = focal_cost(logits, targets)
        assert cost.shape == (3, 2)
        for q in range(3):
            for g in range(2):
                expected = sigmoid_focal_loss(logits[q], targets[g], reduction="none").mean()
                torch.testing.assert_close(cost[q, g], expected)

    def test_pair_cost_matches_matrix(self) -> None:
        """Should give the same value as the matching cost matrix cell."""
        target = _target()
        prediction = _prediction()
        weights = LossWeights()
        matrix = cost_matrix(
            prediction.human_boxes[0],
            prediction.object_boxes[0],
            prediction.object_logits[0],
            prediction.interaction_logits[0],
            target,
            weights,
        )
        assert matrix.shape == (4, 2)
        for q in range(4):
            for g in range(2):
                value = pair_cost(
                    prediction.human_boxes[0, q],
                    prediction.object_boxes[0, q],
                    prediction.object_logits[0, q],
                    prediction.interaction_logits[0, q],
                    target,
                    g,
                    weights,
                )
                assert math.isclose(value, float(matrix[q, g]), rel_tol=1e-5, abs_tol=1e-6)

    def test_object_term_uses_gt_class_probability(self) -> None:
        """Should lower the cost as the ground-truth class becomes more probable."""
        target = _target()
        prediction = _prediction(n_q=2)
        weights = LossWeights(lambda_b=0.0, lambda_u=0.0, lambda_c_a=0.0)
        logits = torch.zeros(2, 4)
        logits[1, 0] = 5.0
        matrix = cost_matrix(
            prediction.human_boxes[0],
            prediction.object_boxes[0],
            logits,
            prediction.interaction_logits[0],
            target,
            weights,
        )
        assert float(matrix[1, 0]) < float(matrix[0, 0])
        torch.testing.assert_close(matrix[0, 0], torch.tensor(-0.25))

    def test_giou_term_on_disjoint_boxes(self) -> None:
        """Should charge 1 - GIoU = 1.5 for corner-touching boxes of side 0.5."""
        human = torch.tensor([0.25, 0.25, 0.5, 0.5])
        gt = torch.tensor([[0.75, 0.75, 0.5, 0.5]])
        target = ImageTarget(
            human_boxes=gt,
            object_boxes=gt.clone(),
            object_labels=torch.tensor([0]),
            interactions=torch.zeros(1, 5),
        )
        weights = LossWeights(lambda_b=0.0, lambda_u=1.0, lambda_c_o=0.0, lambda_c_a=0.0)
        cost = pair_cost(human, gt[0], torch.zeros(4), torch.zeros(5), target, 0, weights)

        reference = generalized_box_iou(
            box_convert(human.reshape(1, 4), "cxcywh", "xyxy"), box_convert(gt, "cxcywh", "xyxy")
        )
        assert float(reference[0, 0]) == pytest.approx(-0.5)
        assert cost == pytest.approx(1.0 - float(reference[0, 0]))
        assert cost == pytest.approx(1.5)


class TestMatchLayer:
    """Tests for match_layer()."""

    def test_finds_the_exact_query(self) -> None:
        """Should match each ground truth to the query that reproduces it."""
        target = _target()
        prediction = _prediction()
        prediction.human_boxes[0, 2] = target.human_boxes[0]
        prediction.object_boxes[0, 2] = target.object_boxes[0]
        prediction.human_boxes[0, 0] = target.human_boxes[1]
        prediction.object_boxes[0, 0] = target.object_boxes[1]
        prediction.object_logits[0, 2, 0] = 8.0
        prediction.object_logits[0, 0, 2] = 8.0
        (result,) = match_layer(prediction, [target], LossWeights())
        assert result.pairs == ((2, 0), (0, 1))

    def test_empty_target(self) -> None:
        """Should produce an empty match for an image without pairs."""
        empty = ImageTarget(
            human_boxes=torch.zeros(0, 4),
            object_boxes=torch.zeros(0, 4),
            object_labels=torch.zeros(0, dtype=torch.long),
            interactions=torch.zeros(0, 5),
        )
        (result,) = match_layer(_prediction(), [empty], LossWeights())
        assert result.pairs == ()
        assert result.unmatched_queries == frozenset(range(4))
