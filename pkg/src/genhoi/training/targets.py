"""Per-image training targets in the model's output space."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import torch
from torchvision.ops import box_convert

from genhoi.config import ClassifierMode
from genhoi.data.manifest import SceneSample
from genhoi.label_space import LabelSpace


@dataclass
class ImageTarget:
    """Ground truth of one image.

    Boxes are normalized ``cx, cy, w, h``; ``interactions`` is a multi-hot
    ``(G, K)`` matrix over the interaction logit columns.
    """

    human_boxes: torch.Tensor
    object_boxes: torch.Tensor
    object_labels: torch.Tensor
    interactions: torch.Tensor

    @property
    def num_pairs(self) -> int:
        return int(self.object_labels.shape[0])

    def to(self, device: torch.device | str) -> ImageTarget:
        return ImageTarget(
            human_boxes=self.human_boxes.to(device),
            object_boxes=self.object_boxes.to(device),
            object_labels=self.object_labels.to(device),
            interactions=self.interactions.to(device),
        )


def output_columns(
    ls: LabelSpace, mode: ClassifierMode, active_rows: Sequence[int] | None = None
) -> list[int]:
    """Label ids of the interaction logit columns: HOI ids, or verb ids in verb mode."""
    if mode is ClassifierMode.VERB:
        return list(range(ls.num_verbs))
    return list(active_rows) if active_rows is not None else list(range(ls.num_triplets))


def build_target(
    sample: SceneSample,
    ls: LabelSpace,
    columns: Sequence[int],
    mode: ClassifierMode = ClassifierMode.TRIPLET,
    dtype: torch.dtype = torch.float32,
) -> ImageTarget:
    """Convert pixel-corner annotations to an ``ImageTarget``.

    HOI ids without a column (unseen ones while training zero-shot) are dropped.
    """
    column_of = {label: i for i, label in enumerate(columns)}
    scale = torch.tensor(
        [sample.width, sample.height, sample.width, sample.height], dtype=torch.float64
    )
    humans, objects, labels, hots = [], [], [], []
    for ann in sample.annotations:
        hot = torch.zeros(len(columns), dtype=dtype)
        for hoi_id in ann.hoi_ids:
            label = ls.verb_map[hoi_id] if mode is ClassifierMode.VERB else hoi_id
            if label in column_of:
                hot[column_of[label]] = 1.0
        humans.append(torch.tensor(ann.human_box, dtype=torch.float64) / scale)
        objects.append(torch.tensor(ann.object_box, dtype=torch.float64) / scale)
        labels.append(ann.object_id)
        hots.append(hot)
    if not labels:
        empty = torch.zeros(0, 4, dtype=dtype)
        return ImageTarget(
            human_boxes=empty,
            object_boxes=empty.clone(),
            object_labels=torch.zeros(0, dtype=torch.long),
            interactions=torch.zeros(0, len(columns), dtype=dtype),
        )
    return ImageTarget(
        human_boxes=box_convert(torch.stack(humans), "xyxy", "cxcywh").to(dtype),
        object_boxes=box_convert(torch.stack(objects), "xyxy", "cxcywh").to(dtype),
        object_labels=torch.tensor(labels, dtype=torch.long),
        interactions=torch.stack(hots),
    )
