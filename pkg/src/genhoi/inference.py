"""Post-processing: score composition, top-K selection and triplet NMS."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch
from PIL import Image, ImageDraw
from torchvision.ops import box_convert, box_iou

from genhoi.config import ClassifierMode, InferenceConfig
from genhoi.data.dataset import collate_images
from genhoi.data.manifest import SceneSample
from genhoi.errors import EvaluationError, ShapeError
from genhoi.label_space import LabelSpace, expand_object_scores, expand_verb_scores
from genhoi.model.gen import GEN
from genhoi.utils.logging import get_logger

logger = get_logger(__name__)

BoxT = tuple[float, float, float, float]


@dataclass(frozen=True)
class Detection:
    """A scored HOI triplet with pixel-corner boxes."""

    image_id: str
    human_box: BoxT
    object_box: BoxT
    object_id: int
    hoi_id: int
    score: float

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["human_box"] = list(self.human_box)
        data["object_box"] = list(self.object_box)
        return data


def object_probabilities(object_logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the real object classes; the no-object column is dropped first."""
    return object_logits[..., :-1].softmax(-1)


def interaction_probabilities(
    interaction_logits: torch.Tensor, ls: LabelSpace, mode: ClassifierMode = ClassifierMode.TRIPLET
) -> torch.Tensor:
    """Per-triplet interaction scores; verb scores are copied to their triplets."""
    scores = interaction_logits.sigmoid()
    if mode is ClassifierMode.VERB:
        return expand_verb_scores(scores, ls)
    return scores


def compose_scores(
    interaction_scores: torch.Tensor, object_scores: torch.Tensor, ls: LabelSpace
) -> torch.Tensor:
    """``s_a + e ** 2`` where ``e`` copies each object score to its triplets."""
    if interaction_scores.shape[-1] != ls.num_triplets:
        raise ShapeError(
            f"Interaction scores have {interaction_scores.shape[-1]} columns, "
            f"expected {ls.num_triplets}"
        )
    if interaction_scores.shape[:-1] != object_scores.shape[:-1]:
        raise ShapeError(
            f"Interaction scores {tuple(interaction_scores.shape)} and object scores "
            f"{tuple(object_scores.shape)} disagree on the query axis"
        )
    expanded = expand_object_scores(object_scores, ls)
    return interaction_scores + expanded * expanded


def _to_pixels(boxes: torch.Tensor, width: int, height: int) -> np.ndarray:
    corners = box_convert(boxes.detach().cpu().double(), "cxcywh", "xyxy").numpy()
    corners = corners * np.array([width, height, width, height], dtype=np.float64)
    corners[:, 0::2] = corners[:, 0::2].clip(0, width)
    corners[:, 1::2] = corners[:, 1::2].clip(0, height)
    return corners


def select_topk(
    scores: torch.Tensor,
    human_boxes: torch.Tensor,
    object_boxes: torch.Tensor,
    k: int,
    ls: LabelSpace,
    *,
    width: int,
    height: int,
    image_id: str = "",
) -> list[Detection]:
    """Global top-``k`` over all (query, HOI) cells.

    Boxes are normalized ``cx, cy, w, h`` and come back as pixel corners. Equal
    scores are ordered by query index, then HOI id.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    grid = scores.detach().cpu().double().numpy()
    n_hoi = grid.shape[1]
    order = np.argsort(-grid.ravel(), kind="stable")[:k]
    humans = _to_pixels(human_boxes, width, height)
    objects = _to_pixels(object_boxes, width, height)
    detections = []
    for cell in order.tolist():
        q, h = divmod(cell, n_hoi)
        detections.append(
            Detection(
                image_id=image_id,
                human_box=tuple(float(v) for v in humans[q]),  # type: ignore[arg-type]
                object_box=tuple(float(v) for v in objects[q]),  # type: ignore[arg-type]
                object_id=ls.expansion_map[h],
                hoi_id=h,
                score=float(grid[q, h]),
            )
        )
    return detections


def triplet_nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy per-HOI suppression of pairs whose human and object IoUs both exceed the threshold.

    The result keeps the descending score order of the input.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    ordered = sorted(detections, key=lambda d: -d.score)
    groups: dict[int, list[int]] = {}
    for i, det in enumerate(ordered):
        groups.setdefault(det.hoi_id, []).append(i)

    keep: set[int] = set()
    for members in groups.values():
        humans = torch.tensor([ordered[i].human_box for i in members], dtype=torch.float64)
        objects = torch.tensor([ordered[i].object_box for i in members], dtype=torch.float64)
        iou_h = box_iou(humans, humans)
        iou_o = box_iou(objects, objects)
        kept: list[int] = []
        for j in range(len(members)):
            if any(iou_h[j, m] > iou_threshold and iou_o[j, m] > iou_threshold for m in kept):
                continue
            kept.append(j)
        keep.update(members[j] for j in kept)
    return [det for i, det in enumerate(ordered) if i in keep]


@torch.no_grad()
def detect_batch(
    images: torch.Tensor,
    model: GEN,
    ls: LabelSpace,
    *,
    k: int = 100,
    iou_threshold: float = 0.7,
    image_ids: Sequence[str] | None = None,
) -> list[list[Detection]]:
    """Run the full pipeline on a ``(B, 3, H, W)`` batch; the mimic path is unused."""
    model.eval()
    output = model(images)
    last = output.last
    height, width = int(images.shape[2]), int(images.shape[3])
    s_a = interaction_probabilities(last.interaction_logits, ls, model.config.classifier_mode)
    s_o = object_probabilities(last.object_logits)
    composed = compose_scores(s_a, s_o, ls)
    results = []
    for b in range(images.shape[0]):
        dets = select_topk(
            composed[b],
            last.human_boxes[b],
            last.object_boxes[b],
            k,
            ls,
            width=width,
            height=height,
            image_id=image_ids[b] if image_ids is not None else "",
        )
        results.append(triplet_nms(dets, iou_threshold))
    return results


def detect(
    image: np.ndarray | torch.Tensor,
    model: GEN,
    ls: LabelSpace,
    k: int = 100,
    iou_threshold: float = 0.7,
    image_id: str = "",
) -> list[Detection]:
    """Detections for one ``H x W x 3`` image in [0, 1]."""
    tensor = torch.as_tensor(np.asarray(image, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)
    dtype = next(model.parameters()).dtype
    device = next(model.parameters()).device
    return detect_batch(
        tensor.to(device=device, dtype=dtype),
        model,
        ls,
        k=k,
        iou_threshold=iou_threshold,
        image_ids=[image_id],
    )[0]


def detect_dataset(
    samples: Sequence[SceneSample],
    model: GEN,
    ls: LabelSpace,
    config: InferenceConfig | None = None,
    batch_size: int = 16,
) -> list[Detection]:
    config = config or InferenceConfig()
    param = next(model.parameters())
    detections: list[Detection] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        images = collate_images(chunk).to(device=param.device, dtype=param.dtype)
        for dets in detect_batch(
            images,
            model,
            ls,
            k=config.top_k,
            iou_threshold=config.nms_threshold,
            image_ids=[s.image_id for s in chunk],
        ):
            detections.extend(dets)
    logger.info("Detected %d triplets over %d images", len(detections), len(samples))
    return detections


def write_detections(
    detections: Sequence[Detection], path: Path, *, config_hash: str | None = None
) -> None:
    """Write the detections JSON array; ``config_hash`` goes to a ``.meta.json`` sidecar."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([d.to_dict() for d in detections], indent=1) + "\n", "utf-8")
    if config_hash is not None:
        meta = {"config_hash": config_hash, "count": len(detections)}
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2) + "\n", "utf-8")


def read_detections_meta(path: Path) -> dict[str, Any]:
    """Sidecar metadata written next to a detections file, or an empty dict."""
    meta = path.with_suffix(".meta.json")
    if not meta.exists():
        return {}
    try:
        return dict(json.loads(meta.read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as e:
        raise EvaluationError(f"Cannot read detections metadata {meta}: {e}") from e


def load_detections(path: Path) -> list[Detection]:
    try:
        records = json.loads(Path(path).read_text(encoding="utf-8"))
        return [
            Detection(
                image_id=str(r["image_id"]),
                human_box=tuple(float(v) for v in r["human_box"]),  # type: ignore[arg-type]
                object_box=tuple(float(v) for v in r["object_box"]),  # type: ignore[arg-type]
                object_id=int(r["object_id"]),
                hoi_id=int(r["hoi_id"]),
                score=float(r["score"]),
            )
            for r in records
        ]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise EvaluationError(f"Cannot read detections {path}: {e}") from e


def render_detections(
    sample: SceneSample,
    detections: Sequence[Detection],
    ls: LabelSpace,
    path: Path,
    *,
    top: int = 3,
    scale: int = 4,
) -> None:
    """Draw the ``top`` highest-scoring detections onto an upscaled copy of the image."""
    pixels = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
    img = Image.fromarray(pixels).resize(
        (sample.width * scale, sample.height * scale), Image.Resampling.NEAREST
    )
    draw = ImageDraw.Draw(img)
    own = [d for d in detections if d.image_id == sample.image_id]
    ranked = sorted(own, key=lambda d: -d.score)
    for det in ranked[:top]:
        h = [v * scale for v in det.human_box]
        o = [v * scale for v in det.object_box]
        draw.rectangle(h, outline=(30, 90, 220), width=2)
        draw.rectangle(o, outline=(20, 160, 60), width=2)
        label = f"{ls.describe(det.hoi_id)} {det.score:.2f}"
        draw.text((h[0] + 2, h[1] + 2), label, fill=(0, 0, 0))
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
