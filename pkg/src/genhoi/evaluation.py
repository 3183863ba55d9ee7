"""HICO-style pair-IoU mAP with Full/Rare/Non-Rare and Seen/Unseen aggregates."""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torchvision.ops import box_iou

from genhoi.data.manifest import Manifest, load_manifest
from genhoi.errors import EvaluationError
from genhoi.inference import Detection, load_detections
from genhoi.label_space import LabelSpace, SplitSpec, rare_split
from genhoi.utils.logging import get_logger

logger = get_logger(__name__)

IOU_THRESHOLD = 0.5

PairT = tuple[tuple[float, float, float, float], tuple[float, float, float, float]]


def _mean(values: Iterable[float]) -> float | None:
    items = list(values)
    return float(np.mean(items)) if items else None


@dataclass
class EvalReport:
    """Per-HOI APs and their unweighted category means.

    ``per_hoi_ap[h]`` is ``None`` for HOIs without ground truth; those never
    enter an aggregate. An aggregate is ``None`` when its category set is empty
    or was not defined for the run.
    """

    per_hoi_ap: list[float | None]
    num_gt: list[int]
    map_full: float | None
    map_rare: float | None = None
    map_nonrare: float | None = None
    map_seen: float | None = None
    map_unseen: float | None = None
    counts: dict[str, int] = field(default_factory=dict)
    setting: str = "regular"
    config_hash: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def write_json(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def write_csv(self, path: Path, ls: LabelSpace, split: SplitSpec | None = None) -> None:
        """One row per HOI id: names, GT count, AP and category membership."""
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["hoi_id", "verb", "object", "num_gt", "ap", "rare", "unseen"])
            for t in ls.triplets:
                ap = self.per_hoi_ap[t.id]
                writer.writerow(
                    [
                        t.id,
                        ls.verbs[t.verb_id].name,
                        ls.objects[t.object_id].name,
                        self.num_gt[t.id],
                        "" if ap is None else f"{ap:.6f}",
                        int(split is not None and t.id in split.rare),
                        int(split is not None and t.id in split.unseen),
                    ]
                )

    def summary_rows(self) -> list[tuple[str, float | None]]:
        rows = [("full", self.map_full)]
        if self.map_rare is not None or self.map_nonrare is not None:
            rows += [("rare", self.map_rare), ("non-rare", self.map_nonrare)]
        if self.setting != "regular":
            rows += [("seen", self.map_seen), ("unseen", self.map_unseen)]
        return rows


def is_true_positive(det: Detection, gts: Sequence[PairT], used: list[bool]) -> int | None:
    """Match ``det`` against the unused ground-truth pairs of its image and HOI.

    Picks the unused pair maximizing ``min(IoU_h, IoU_o)`` among those where both
    IoUs exceed 0.5, marks it used and returns its index. Returns ``None`` for a
    false positive.
    """
    if not gts:
        return None
    det_h = torch.tensor([det.human_box], dtype=torch.float64)
    det_o = torch.tensor([det.object_box], dtype=torch.float64)
    iou_h = box_iou(det_h, torch.tensor([g[0] for g in gts], dtype=torch.float64))[0]
    iou_o = box_iou(det_o, torch.tensor([g[1] for g in gts], dtype=torch.float64))[0]
    best, best_overlap = None, -1.0
    for i in range(len(gts)):
        if used[i] or iou_h[i] <= IOU_THRESHOLD or iou_o[i] <= IOU_THRESHOLD:
            continue
        overlap = float(torch.minimum(iou_h[i], iou_o[i]))
        if overlap > best_overlap:
            best, best_overlap = i, overlap
    if best is not None:
        used[best] = True
    return best


def average_precision(tp_flags: Sequence[bool], n_gt: int) -> float | None:
    """Area under the enveloped precision-recall curve.

    ``tp_flags`` is ordered by descending score. Returns ``None`` when the
    category has no ground truth.
    """
    if n_gt <= 0:
        return None
    if len(tp_flags) == 0:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(tp_flags, dtype=np.float64))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _valid_box(box: Sequence[float]) -> bool:
    return (
        len(box) == 4
        and all(math.isfinite(v) for v in box)
        and box[0] < box[2]
        and box[1] < box[3]
    )


def _check_detections(
    detections: Sequence[Detection], image_ids: set[str], num_triplets: int
) -> None:
    for det in detections:
        if det.image_id not in image_ids:
            raise EvaluationError(f"Detection refers to unknown image {det.image_id!r}")
        if not 0 <= det.hoi_id < num_triplets:
            raise EvaluationError(f"Detection hoi_id {det.hoi_id} outside [0, {num_triplets})")
        if not (_valid_box(det.human_box) and _valid_box(det.object_box)):
            raise EvaluationError(
                f"Malformed box in detection for {det.image_id}: "
                f"{det.human_box} / {det.object_box}"
            )
        if not math.isfinite(det.score):
            raise EvaluationError(f"Non-finite score in detection for {det.image_id}")


def ground_truth_pairs(manifest: Manifest) -> dict[tuple[str, int], list[PairT]]:
    """``(image_id, hoi_id) -> [(human_box, object_box), ...]``."""
    pairs: dict[tuple[str, int], list[PairT]] = {}
    for record in manifest.images:
        for ann in record.annotations:
            for hoi_id in ann.hoi_ids:
                pairs.setdefault((record.image_id, hoi_id), []).append(
                    (ann.human_box, ann.object_box)
                )
    return pairs


def evaluate(
    detections: Sequence[Detection] | Path,
    manifest: Manifest | Path,
    ls: LabelSpace,
    split: SplitSpec | None = None,
    *,
    train_counts: Sequence[int] | None = None,
    config_hash: str | None = None,
) -> EvalReport:
    """Pair-IoU mAP of ``detections`` against the manifest ground truth.

    Rare/non-rare sets come from ``split`` when it carries them, otherwise from
    ``train_counts`` or the label space's counts. Seen/unseen aggregates are
    reported for zero-shot splits only.

    Raises:
        EvaluationError: On unknown image ids, out-of-range HOI ids or malformed boxes.
    """
    if isinstance(detections, Path):
        detections = load_detections(detections)
    if isinstance(manifest, Path):
        manifest = load_manifest(manifest, ls)
    _check_detections(detections, {r.image_id for r in manifest.images}, ls.num_triplets)

    gt = ground_truth_pairs(manifest)
    num_gt = [0] * ls.num_triplets
    for (_, hoi_id), pairs in gt.items():
        num_gt[hoi_id] += len(pairs)

    by_hoi: dict[int, list[Detection]] = {h: [] for h in range(ls.num_triplets)}
    for det in detections:
        by_hoi[det.hoi_id].append(det)

    per_hoi_ap: list[float | None] = []
    for hoi_id in range(ls.num_triplets):
        ranked = sorted(by_hoi[hoi_id], key=lambda d: -d.score)
        used = {key: [False] * len(pairs) for key, pairs in gt.items() if key[1] == hoi_id}
        flags = []
        for det in ranked:
            key = (det.image_id, hoi_id)
            flags.append(is_true_positive(det, gt.get(key, []), used.get(key, [])) is not None)
        per_hoi_ap.append(average_precision(flags, num_gt[hoi_id]))

    rare: frozenset[int] | None = None
    non_rare: frozenset[int] | None = None
    if split is not None and (split.rare or split.non_rare):
        rare, non_rare = split.rare, split.non_rare
    else:
        counts = train_counts if train_counts is not None else ls.train_counts
        if counts is not None:
            rare, non_rare = rare_split(counts)

    def category_map(ids: Iterable[int] | None) -> float | None:
        if ids is None:
            return None
        return _mean(ap for h in sorted(ids) if (ap := per_hoi_ap[h]) is not None)

    zero_shot = split is not None and split.is_zero_shot
    report = EvalReport(
        per_hoi_ap=per_hoi_ap,
        num_gt=num_gt,
        map_full=category_map(range(ls.num_triplets)),
        map_rare=category_map(rare),
        map_nonrare=category_map(non_rare),
        map_seen=category_map(split.seen) if zero_shot and split is not None else None,
        map_unseen=category_map(split.unseen) if zero_shot and split is not None else None,
        counts={
            "detections": len(detections),
            "images": len(manifest.images),
            "ground_truth": sum(num_gt),
            "categories_with_gt": sum(1 for n in num_gt if n > 0),
            "rare": len(rare) if rare is not None else 0,
            "non_rare": len(non_rare) if non_rare is not None else 0,
            "unseen": len(split.unseen) if split is not None else 0,
        },
        setting=split.setting if split is not None else "regular",
        config_hash=config_hash,
    )
    logger.info(
        "mAP full=%s rare=%s non-rare=%s",
        _fmt(report.map_full),
        _fmt(report.map_rare),
        _fmt(report.map_nonrare),
    )
    return report


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"
