"""Independent reference implementations and structural checks.

Everything here is written directly from the definitions, with no shared code
paths beyond the data types, so the production matcher, evaluator and model can
be compared against it.
"""

from __future__ import annotations

import copy
import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import torch
from torch.nn import functional as F

from genhoi.config import RunConfig
from genhoi.data.dataset import HOIDataset
from genhoi.data.manifest import Annotation, ImageRecord, Manifest, SceneSample
from genhoi.data.toy import toy_label_space
from genhoi.embeddings.classifier import Classifier, cosine_scores
from genhoi.embeddings.mimic import mimic_loss
from genhoi.embeddings.providers import SyntheticTextProvider
from genhoi.inference import Detection, compose_scores
from genhoi.label_space import LabelSpace, expand_object_scores
from genhoi.model.gen import GEN, build_model
from genhoi.training.losses import compute_losses
from genhoi.training.matcher import match_layer
from genhoi.training.targets import ImageTarget
from genhoi.training.trainer import Trainer

Box = tuple[float, float, float, float]


def brute_force_assignment(cost: np.ndarray) -> float:
    """Minimum total cost over every injective ground-truth to query map."""
    n_q, n_gt = cost.shape
    if n_gt == 0:
        return 0.0
    best = math.inf
    for rows in itertools.permutations(range(n_q), n_gt):
        best = min(best, sum(cost[r, g] for g, r in enumerate(rows)))
    return float(best)


def random_cost_matrices(count: int, max_size: int = 7, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    matrices = []
    for _ in range(count):
        n_q = int(rng.integers(1, max_size + 1))
        n_gt = int(rng.integers(0, n_q + 1))
        matrices.append(rng.uniform(0.0, 10.0, size=(n_q, n_gt)))
    return matrices


def reference_iou(a: Sequence[float], b: Sequence[float]) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def reference_evaluate(
    detections: Sequence[Detection], manifest: Manifest, num_triplets: int
) -> list[float | None]:
    """Per-HOI AP from the metric definition.

    AP is the mean over ground truths of the best precision reached at or after
    the rank where each one was found; missed ground truths contribute zero.
    """
    aps: list[float | None] = []
    for hoi_id in range(num_triplets):
        gts = [
            (record.image_id, ann.human_box, ann.object_box)
            for record in manifest.images
            for ann in record.annotations
            if hoi_id in ann.hoi_ids
        ]
        if not gts:
            aps.append(None)
            continue
        ranked = sorted((d for d in detections if d.hoi_id == hoi_id), key=lambda d: -d.score)
        used = [False] * len(gts)
        hits: list[bool] = []
        for det in ranked:
            best, best_overlap = None, -1.0
            for j, (image_id, human, obj) in enumerate(gts):
                if used[j] or image_id != det.image_id:
                    continue
                iou_h = reference_iou(det.human_box, human)
                iou_o = reference_iou(det.object_box, obj)
                if iou_h > 0.5 and iou_o > 0.5 and min(iou_h, iou_o) > best_overlap:
                    best, best_overlap = j, min(iou_h, iou_o)
            if best is not None:
                used[best] = True
            hits.append(best is not None)
        precisions = []
        found = 0
        for rank, hit in enumerate(hits, start=1):
            found += hit
            precisions.append(found / rank)
        total = sum(max(precisions[i:]) for i, hit in enumerate(hits) if hit)
        aps.append(total / len(gts))
    return aps


def _random_box(rng: np.random.Generator, size: int) -> Box:
    x1, y1 = rng.uniform(0, size - 8, size=2)
    x2 = rng.uniform(x1 + 4, size)
    y2 = rng.uniform(y1 + 4, size)
    return (float(x1), float(y1), float(x2), float(y2))


def _jitter(box: Box, rng: np.random.Generator, size: int, sigma: float = 3.0) -> Box:
    moved = np.clip(np.asarray(box) + rng.normal(0.0, sigma, size=4), 0, size)
    if moved[0] >= moved[2] or moved[1] >= moved[3]:
        return box
    return (float(moved[0]), float(moved[1]), float(moved[2]), float(moved[3]))


def random_scenes(
    ls: LabelSpace, n_images: int = 20, seed: int = 0, size: int = 64
) -> tuple[Manifest, list[Detection]]:
    """Random ground truth plus jittered and spurious detections over it."""
    rng = np.random.default_rng(seed)
    candidates = [o.id for o in ls.objects if ls.triplets_of_object[o.id]]
    records: list[ImageRecord] = []
    detections: list[Detection] = []
    for i in range(n_images):
        image_id = f"scene{i:03d}"
        annotations = []
        for _ in range(int(rng.integers(1, 4))):
            object_id = int(rng.choice(candidates))
            choices = ls.triplets_of_object[object_id]
            k = int(rng.integers(1, min(2, len(choices)) + 1))
            hoi_ids = tuple(sorted(int(h) for h in rng.choice(choices, size=k, replace=False)))
            annotations.append(
                Annotation(
                    human_box=_random_box(rng, size),
                    object_box=_random_box(rng, size),
                    object_id=object_id,
                    hoi_ids=hoi_ids,
                )
            )
        records.append(
            ImageRecord(
                image_id=image_id,
                file=f"{image_id}.png",
                width=size,
                height=size,
                annotations=tuple(annotations),
            )
        )
        for ann in annotations:
            for hoi_id in ann.hoi_ids:
                for _ in range(int(rng.integers(0, 3))):
                    detections.append(
                        Detection(
                            image_id=image_id,
                            human_box=_jitter(ann.human_box, rng, size),
                            object_box=_jitter(ann.object_box, rng, size),
                            object_id=ann.object_id,
                            hoi_id=hoi_id,
                            score=float(rng.random()),
                        )
                    )
        for _ in range(int(rng.integers(0, 6))):
            hoi_id = int(rng.integers(ls.num_triplets))
            detections.append(
                Detection(
                    image_id=image_id,
                    human_box=_random_box(rng, size),
                    object_box=_random_box(rng, size),
                    object_id=ls.expansion_map[hoi_id],
                    hoi_id=hoi_id,
                    score=float(rng.random()),
                )
            )
    return Manifest(label_space_path=ls.name, images=records), detections


@dataclass
class GradcheckResult:
    max_relative_error: float
    entries: int
    worst_parameter: str


def tiny_config(seed: int = 0, **overrides: Any) -> RunConfig:
    """Double-checkable model: 16 channels, 4 queries, 2 decoder layers, 16x16 input."""
    model = {
        "num_queries": 4,
        "hidden_dim": 16,
        "num_heads": 2,
        "num_decoder_layers": 2,
        "num_encoder_layers": 1,
        "ffn_dim": 16,
        "backbone_channels": (8, 16),
        "backbone_strides": (2, 2),
        "image_size": 16,
        "activation": "gelu",
    }
    config = RunConfig(seed=seed).with_updates(
        model=model, embedding={"dim": 16, "theta": 1.0}, loss={"lambda_mimic": 20.0}
    )
    return config.with_updates(**overrides) if overrides else config


def _tiny_target(ls: LabelSpace, num_columns: int, dtype: torch.dtype) -> ImageTarget:
    hoi_id = ls.triplets_of_object[1][0]
    interactions = torch.zeros(1, num_columns, dtype=dtype)
    interactions[0, hoi_id] = 1.0
    return ImageTarget(
        human_boxes=torch.tensor([[0.3, 0.35, 0.25, 0.4]], dtype=dtype),
        object_boxes=torch.tensor([[0.65, 0.6, 0.2, 0.2]], dtype=dtype),
        object_labels=torch.tensor([1]),
        interactions=interactions,
    )


def gradcheck_total_loss(
    *,
    seed: int = 0,
    epsilon: float = 1e-5,
    max_entries_per_tensor: int | None = None,
) -> GradcheckResult:
    """Compare autograd against central differences of the total training loss.

    The model runs in float64 with matchings fixed from an initial forward pass.
    The error of a parameter tensor is ``max|analytic - numeric|`` divided by the
    largest gradient magnitude of that tensor; the worst tensor is reported.
    ``max_entries_per_tensor`` samples entries instead of checking all of them.
    """
    config = tiny_config(seed)
    ls = toy_label_space()
    provider = SyntheticTextProvider.from_config(config.embedding)
    model = build_model(config, ls, provider, frozen_classifiers=False).double()
    model.train()
    generator = torch.Generator().manual_seed(seed)
    images = torch.rand(1, 3, 16, 16, generator=generator, dtype=torch.float64)
    teacher = F.normalize(torch.randn(1, 16, generator=generator, dtype=torch.float64), dim=-1)
    target = _tiny_target(ls, ls.num_triplets, torch.float64)

    with torch.no_grad():
        initial = model(images)
    matches = [match_layer(layer, [target], config.loss) for layer in initial.layers]

    def total_loss() -> torch.Tensor:
        losses = compute_losses(
            model(images),
            [target],
            config.loss,
            teacher=teacher,
            mimic_norm=config.ablation.mimic_norm,
            matches=matches,
        )
        assert losses.total is not None
        return losses.total

    model.zero_grad()
    total_loss().backward()

    rng = np.random.default_rng(seed)
    worst, worst_name, checked = 0.0, "", 0
    with torch.no_grad():
        for name, param in model.named_parameters():
            if not param.requires_grad:
                continue
            grad = param.grad if param.grad is not None else torch.zeros_like(param)
            analytic = grad.detach().reshape(-1).clone()
            flat = param.data.view(-1)
            indices = np.arange(flat.numel())
            if max_entries_per_tensor is not None and flat.numel() > max_entries_per_tensor:
                indices = np.sort(rng.choice(flat.numel(), max_entries_per_tensor, replace=False))
            numeric = torch.zeros(len(indices), dtype=torch.float64)
            for j, i in enumerate(indices.tolist()):
                original = float(flat[i])
                flat[i] = original + epsilon
                plus = float(total_loss())
                flat[i] = original - epsilon
                minus = float(total_loss())
                flat[i] = original
                numeric[j] = (plus - minus) / (2 * epsilon)
            picked = analytic[torch.as_tensor(indices)]
            scale = max(float(picked.abs().max()), float(numeric.abs().max()), 1e-8)
            error = float((picked - numeric).abs().max()) / scale
            checked += len(indices)
            if error > worst:
                worst, worst_name = error, name
    return GradcheckResult(max_relative_error=worst, entries=checked, worst_parameter=worst_name)


def ige_identity_error(model: GEN, images: torch.Tensor) -> float:
    """Largest deviation of the interaction queries from the human/object feature mean."""
    if not model.config.use_ige:
        raise ValueError("Interaction queries are only guided when use_ige is on")
    with torch.no_grad():
        output = model(images)
    features = output.features
    return max(
        float((q - (h + o) / 2).abs().max())
        for q, h, o in zip(
            features.interaction_queries, features.human, features.object, strict=True
        )
    )


def permuted_model(model: GEN, perm: torch.Tensor) -> GEN:
    """Copy of ``model`` whose query slot ``i`` holds the original slot ``perm[i]``."""
    clone = copy.deepcopy(model)
    with torch.no_grad():
        bank = clone.queries
        names = ("human", "object", "position") if bank.use_pge else ("unified",)
        for name in names:
            getattr(bank, name).copy_(getattr(bank, name)[perm])
        if not clone.config.use_ige:
            clone.interaction_embed.copy_(clone.interaction_embed[perm])
    return clone


def permutation_equivariance_error(model: GEN, images: torch.Tensor, perm: torch.Tensor) -> float:
    """Max difference between the permuted model's outputs and the permuted outputs."""
    model.eval()
    clone = permuted_model(model, perm).eval()
    with torch.no_grad():
        base = model(images)
        moved = clone(images)
    error = 0.0
    for a, b in zip(base.layers, moved.layers, strict=True):
        for name in ("human_boxes", "object_boxes", "object_logits", "interaction_logits"):
            error = max(error, float((getattr(a, name)[:, perm] - getattr(b, name)).abs().max()))
    return error


def composition_error(ls: LabelSpace, seed: int = 0) -> float:
    generator = torch.Generator().manual_seed(seed)
    s_a = torch.rand(5, ls.num_triplets, generator=generator, dtype=torch.float64)
    s_o = torch.rand(5, ls.num_objects, generator=generator, dtype=torch.float64)
    expected = torch.empty_like(s_a)
    for h in range(ls.num_triplets):
        e = s_o[:, ls.expansion_map[h]]
        expected[:, h] = s_a[:, h] + e * e
    return float((compose_scores(s_a, s_o, ls) - expected).abs().max())


def expansion_gather_exact(ls: LabelSpace, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    s_o = rng.random((3, ls.num_objects))
    expanded = expand_object_scores(s_o, ls)
    return all(
        np.array_equal(expanded[:, h], s_o[:, ls.expansion_map[h]])
        for h in range(ls.num_triplets)
    )


def frozen_classifier_unchanged(seed: int = 0, steps: int = 2) -> bool:
    """Train a frozen-classifier model for a few steps; its rows must be bitwise unchanged."""
    config = tiny_config(seed, optim={"batch_size": 1})
    ls = toy_label_space()
    provider = SyntheticTextProvider.from_config(config.embedding)
    model = build_model(config, ls, provider, frozen_classifiers=True)
    classifiers = [
        c for c in (model.interaction_classifier, model.object_classifier) if c is not None
    ]
    before = [c.weight.clone() for c in classifiers]
    rng = np.random.default_rng(seed)
    sample = SceneSample(
        image=rng.random((16, 16, 3)).astype(np.float32),
        annotations=[
            Annotation(
                human_box=(2.0, 2.0, 8.0, 12.0),
                object_box=(8.0, 6.0, 14.0, 12.0),
                object_id=1,
                hoi_ids=(ls.triplets_of_object[1][0],),
            )
        ],
        image_id="frozen",
    )
    trainer = Trainer(config, model, HOIDataset([sample], ls), ls, provider=provider)
    model.train()
    for step in range(steps):
        trainer.step([sample], step)
    return all(torch.equal(b, c.weight) for b, c in zip(before, classifiers, strict=True))


def mimic_zero_at_match(dim: int = 16, seed: int = 0) -> float:
    generator = torch.Generator().manual_seed(seed)
    teacher = F.normalize(torch.randn(dim, generator=generator, dtype=torch.float64), dim=0)
    features = teacher.expand(4, dim).clone()
    return float(mimic_loss(teacher, features))


def cosine_scale_error(dim: int = 16, seed: int = 0) -> float:
    generator = torch.Generator().manual_seed(seed)
    weight = F.normalize(torch.randn(6, dim, generator=generator, dtype=torch.float64), dim=-1)
    cls = Classifier(weight, theta=100.0, trainable=False)
    v = torch.randn(3, dim, generator=generator, dtype=torch.float64)
    return max(
        float((cosine_scores(v * c, cls) - cosine_scores(v, cls)).abs().max())
        for c in (1e-3, 0.5, 7.0, 1e3)
    )
