"""Set-prediction losses with per-layer matching and the mimic term."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch.nn import functional as F
from torchvision.ops import box_convert, generalized_box_iou, sigmoid_focal_loss

from genhoi.config import LossWeights, MimicNorm
from genhoi.embeddings.mimic import mimic_loss
from genhoi.model.gen import GENOutput, LayerPrediction
from genhoi.training.matcher import MatchResult, match_layer
from genhoi.training.targets import ImageTarget

TERMS = ("box_h", "box_o", "giou_h", "giou_o", "cls_o", "cls_a")


@dataclass
class LossBreakdown:
    """Per-layer loss terms, the mimic term and the weighted total."""

    layers: list[dict[str, torch.Tensor]] = field(default_factory=list)
    layer_costs: list[torch.Tensor] = field(default_factory=list)
    mimic: torch.Tensor | None = None
    total: torch.Tensor | None = None

    def summary(self) -> dict[str, float]:
        """Layer-summed terms as floats, for logging."""
        out = {term: float(sum(layer[term].detach() for layer in self.layers)) for term in TERMS}
        out["mimic"] = float(self.mimic.detach()) if self.mimic is not None else 0.0
        out["total"] = float(self.total.detach()) if self.total is not None else 0.0
        return out


def focal_loss(
    logits: torch.Tensor, targets: torch.Tensor, alpha: float = 0.25, gamma: float = 2.0
) -> torch.Tensor:
    """Elementwise sigmoid focal loss; ``alpha < 0`` disables class weighting."""
    return sigmoid_focal_loss(logits, targets, alpha=alpha, gamma=gamma, reduction="none")


def _giou_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    if pred.shape[0] == 0:
        return pred.sum() * 0
    giou = generalized_box_iou(
        box_convert(pred, "cxcywh", "xyxy"), box_convert(gt, "cxcywh", "xyxy")
    )
    return (1 - torch.diagonal(giou)).sum()


def layer_losses(
    prediction: LayerPrediction,
    targets: list[ImageTarget],
    matches: list[MatchResult],
    weights: LossWeights,
) -> dict[str, torch.Tensor]:
    """Loss terms of one decoder layer given its matching."""
    batch, n_q, n_cls = prediction.object_logits.shape
    num_gt = max(sum(t.num_pairs for t in targets), 1)
    dtype = prediction.human_boxes.dtype
    device = prediction.human_boxes.device

    def index(values: list[int]) -> torch.Tensor:
        return torch.as_tensor(values, dtype=torch.long, device=device)

    batch_idx = index([b for b, m in enumerate(matches) for _ in m.pairs])
    query_idx = index([q for m in matches for q in m.query_indices])
    pred_h = prediction.human_boxes[batch_idx, query_idx]
    pred_o = prediction.object_boxes[batch_idx, query_idx]
    pairs = list(zip(targets, matches, strict=True))
    gt_h = torch.cat([t.human_boxes[index(m.gt_indices)] for t, m in pairs])
    gt_o = torch.cat([t.object_boxes[index(m.gt_indices)] for t, m in pairs])

    object_target = torch.full((batch, n_q), n_cls - 1, dtype=torch.long, device=device)
    interaction_target = torch.zeros_like(prediction.interaction_logits)
    for b, (target, match) in enumerate(zip(targets, matches, strict=True)):
        if not match.pairs:
            continue
        object_target[b, match.query_indices] = target.object_labels[match.gt_indices]
        interaction_target[b, match.query_indices] = target.interactions[match.gt_indices].to(dtype)

    class_weight = torch.ones(n_cls, dtype=dtype, device=device)
    class_weight[-1] = weights.no_object_weight
    cls_o = F.cross_entropy(
        prediction.object_logits.flatten(0, 1), object_target.flatten(), weight=class_weight
    )
    cls_a = (
        focal_loss(
            prediction.interaction_logits,
            interaction_target,
            alpha=weights.focal_alpha,
            gamma=weights.focal_gamma,
        ).sum()
        / num_gt
    )
    return {
        "box_h": F.l1_loss(pred_h, gt_h.to(dtype), reduction="sum") / num_gt,
        "box_o": F.l1_loss(pred_o, gt_o.to(dtype), reduction="sum") / num_gt,
        "giou_h": _giou_loss(pred_h, gt_h.to(dtype)) / num_gt,
        "giou_o": _giou_loss(pred_o, gt_o.to(dtype)) / num_gt,
        "cls_o": cls_o,
        "cls_a": cls_a,
    }


def weighted_cost(terms: dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    return (
        weights.lambda_b * (terms["box_h"] + terms["box_o"])
        + weights.lambda_u * (terms["giou_h"] + terms["giou_o"])
        + weights.lambda_c_o * terms["cls_o"]
        + weights.lambda_c_a * terms["cls_a"]
    )


def compute_losses(
    output: GENOutput,
    targets: list[ImageTarget],
    weights: LossWeights,
    *,
    teacher: torch.Tensor | None = None,
    mimic_norm: MimicNorm = MimicNorm.L1,
    matches: list[list[MatchResult]] | None = None,
) -> LossBreakdown:
    """Total loss: every layer's matched set-prediction cost plus the weighted mimic term.

    Matching runs independently on each layer unless ``matches`` (one list per
    layer) is given. ``teacher`` is ``(B, c_t)``; ``None`` disables the mimic term.
    """
    breakdown = LossBreakdown()
    for k, prediction in enumerate(output.layers):
        layer_matches = matches[k] if matches is not None else match_layer(
            prediction, targets, weights
        )
        terms = layer_losses(prediction, targets, layer_matches, weights)
        breakdown.layers.append(terms)
        breakdown.layer_costs.append(weighted_cost(terms, weights))
    total = torch.stack(breakdown.layer_costs).sum()
    if teacher is not None:
        breakdown.mimic = mimic_loss(teacher, output.interaction_embeddings, mimic_norm)
        total = total + weights.lambda_mimic * breakdown.mimic
    breakdown.total = total
    return breakdown
