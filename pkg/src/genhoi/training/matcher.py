"""Bipartite matching between predicted pairs and ground-truth pairs.

The matching cost adds, per (query, ground truth) cell, the weighted L1 and
``1 - GIoU`` distances of the human and object boxes, the negated object
probability of the ground-truth class and a focal-style interaction cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch.nn import functional as F
from torchvision.ops import box_convert, generalized_box_iou

from genhoi.config import LossWeights
from genhoi.errors import MatchingError
from genhoi.model.gen import LayerPrediction
from genhoi.training.targets import ImageTarget


@dataclass(frozen=True)
class MatchResult:
    """Pairs ``(query, gt)`` sorted by ground-truth index."""

    pairs: tuple[tuple[int, int], ...]
    unmatched_queries: frozenset[int]
    total_cost: float

    @property
    def query_indices(self) -> list[int]:
        return [q for q, _ in self.pairs]

    @property
    def gt_indices(self) -> list[int]:
        return [g for _, g in self.pairs]


def _giou(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    return generalized_box_iou(
        box_convert(pred, "cxcywh", "xyxy"), box_convert(gt, "cxcywh", "xyxy")
    )


def focal_cost(
    logits: torch.Tensor, targets: torch.Tensor, alpha: float = 0.25, gamma: float = 2.0
) -> torch.Tensor:
    """Class-mean sigmoid focal loss of every query row against every target row.

    ``logits`` is ``(N_q, K)`` and ``targets`` ``(G, K)``; returns ``(N_q, G)``.
    """
    p = logits.sigmoid()
    pos = alpha * (1 - p).pow(gamma) * F.softplus(-logits)
    neg = (1 - alpha) * p.pow(gamma) * F.softplus(logits)
    k = max(logits.shape[-1], 1)
    return (pos @ targets.transpose(0, 1) + neg @ (1 - targets).transpose(0, 1)) / k


def cost_matrix(
    human_boxes: torch.Tensor,
    object_boxes: torch.Tensor,
    object_logits: torch.Tensor,
    interaction_logits: torch.Tensor,
    target: ImageTarget,
    weights: LossWeights,
) -> torch.Tensor:
    """``(N_q, G)`` matching cost of one image's predictions against its targets."""
    l1 = torch.cdist(human_boxes, target.human_boxes, p=1) + torch.cdist(
        object_boxes, target.object_boxes, p=1
    )
    giou = (1 - _giou(human_boxes, target.human_boxes)) + (
        1 - _giou(object_boxes, target.object_boxes)
    )
    object_cost = -object_logits.softmax(-1)[:, target.object_labels]
    interaction_cost = focal_cost(
        interaction_logits, target.interactions, weights.focal_alpha, weights.focal_gamma
    )
    return (
        weights.lambda_b * l1
        + weights.lambda_u * giou
        + weights.lambda_c_o * object_cost
        + weights.lambda_c_a * interaction_cost
    )


def pair_cost(
    human_box: torch.Tensor,
    object_box: torch.Tensor,
    object_logits: torch.Tensor,
    interaction_logits: torch.Tensor,
    target: ImageTarget,
    gt_index: int,
    weights: LossWeights,
) -> float:
    """Matching cost of a single prediction against ground truth ``gt_index``."""
    single = ImageTarget(
        human_boxes=target.human_boxes[gt_index : gt_index + 1],
        object_boxes=target.object_boxes[gt_index : gt_index + 1],
        object_labels=target.object_labels[gt_index : gt_index + 1],
        interactions=target.interactions[gt_index : gt_index + 1],
    )
    cost = cost_matrix(
        human_box.reshape(1, 4),
        object_box.reshape(1, 4),
        object_logits.reshape(1, -1),
        interaction_logits.reshape(1, -1),
        single,
        weights,
    )
    return float(cost[0, 0])


def _assignment_cost(cost: np.ndarray) -> float:
    if cost.shape[1] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def hungarian_match(cost: np.ndarray | torch.Tensor) -> MatchResult:
    """Minimum-cost assignment of every ground truth (column) to a distinct query (row).

    Among all minimizers the one whose query sequence, read in ground-truth
    order, is lexicographically smallest is returned.

    Raises:
        MatchingError: On non-finite costs or fewer queries than ground truths.
    """
    if isinstance(cost, torch.Tensor):
        cost = cost.detach().cpu().double().numpy()
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise MatchingError(f"Cost matrix must be 2-D, got shape {cost.shape}")
    n_q, n_gt = cost.shape
    if not np.all(np.isfinite(cost)):
        raise MatchingError("Cost matrix contains non-finite entries")
    if n_q < n_gt:
        raise MatchingError(f"{n_gt} ground truths cannot be matched to {n_q} queries")
    if n_gt == 0:
        return MatchResult(pairs=(), unmatched_queries=frozenset(range(n_q)), total_cost=0.0)

    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())
    tolerance = 1e-9 * max(1.0, abs(best))
    current = dict(zip(cols.tolist(), rows.tolist(), strict=True))

    chosen: list[int] = []
    fixed_cost = 0.0
    free_rows = list(range(n_q))
    for g in range(n_gt):
        for q in [r for r in free_rows if r < current[g]]:
            rest_rows = [r for r in free_rows if r != q]
            rest = cost[np.ix_(rest_rows, list(range(g + 1, n_gt)))]
            if fixed_cost + cost[q, g] + _assignment_cost(rest) <= best + tolerance:
                sub_rows, sub_cols = linear_sum_assignment(rest) if rest.shape[1] else ([], [])
                current = {g: q}
                for r, c in zip(sub_rows, sub_cols, strict=True):
                    current[g + 1 + int(c)] = rest_rows[int(r)]
                break
        q = current[g]
        chosen.append(q)
        fixed_cost += float(cost[q, g])
        free_rows.remove(q)

    pairs = tuple((q, g) for g, q in enumerate(chosen))
    return MatchResult(
        pairs=pairs,
        unmatched_queries=frozenset(range(n_q)) - set(chosen),
        total_cost=float(sum(cost[q, g] for q, g in pairs)),
    )


@torch.no_grad()
def match_layer(
    prediction: LayerPrediction, targets: list[ImageTarget], weights: LossWeights
) -> list[MatchResult]:
    """Match every image of a batch on one decoder layer's outputs."""
    results = []
    for b, target in enumerate(targets):
        if target.num_pairs == 0:
            n_q = prediction.human_boxes.shape[1]
            results.append(
                MatchResult(pairs=(), unmatched_queries=frozenset(range(n_q)), total_cost=0.0)
            )
            continue
        cost = cost_matrix(
            prediction.human_boxes[b],
            prediction.object_boxes[b],
            prediction.object_logits[b],
            prediction.interaction_logits[b],
            target,
            weights,
        )
        results.append(hungarian_match(cost))
    return results
