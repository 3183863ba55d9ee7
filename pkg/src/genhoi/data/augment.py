"""Label-preserving augmentation: horizontal flip and scale jitter."""

from __future__ import annotations

import numpy as np
from PIL import Image

from genhoi.data.geometry import MIRRORED, RuleKind
from genhoi.data.manifest import Annotation, SceneSample
from genhoi.label_space import LabelSpace


def flip_verb_map(ls: LabelSpace, rules_by_verb: dict[int, RuleKind]) -> dict[int, int]:
    """Verb id each verb turns into under a horizontal flip (push <-> pull)."""
    by_rule: dict[RuleKind, int] = {kind: v for v, kind in rules_by_verb.items()}
    mapping: dict[int, int] = {}
    for verb in ls.verbs:
        kind = rules_by_verb.get(verb.id)
        if kind is None:
            mapping[verb.id] = verb.id
            continue
        mapping[verb.id] = by_rule.get(MIRRORED[kind], verb.id)
    return mapping


def hflip(sample: SceneSample, ls: LabelSpace, verb_flip: dict[int, int]) -> SceneSample:
    """Mirror the image and boxes and remap mirrored verbs.

    Returns the sample unchanged when a remapped label is not a triplet of ``ls``.
    """
    width = sample.width
    annotations = []
    for ann in sample.annotations:
        hoi_ids = []
        for hoi_id in ann.hoi_ids:
            t = ls.triplets[hoi_id]
            mapped = ls.triplet_index.get((verb_flip[t.verb_id], t.object_id))
            if mapped is None:
                return sample
            hoi_ids.append(mapped)
        h, o = ann.human_box, ann.object_box
        annotations.append(
            ann.model_copy(
                update={
                    "human_box": (width - h[2], h[1], width - h[0], h[3]),
                    "object_box": (width - o[2], o[1], width - o[0], o[3]),
                    "hoi_ids": tuple(sorted(hoi_ids)),
                }
            )
        )
    return SceneSample(
        image=np.ascontiguousarray(sample.image[:, ::-1, :]),
        annotations=annotations,
        image_id=sample.image_id,
    )


def _scale_box(box, scale: float, cx: float, cy: float):
    return (
        (box[0] - cx) * scale + cx,
        (box[1] - cy) * scale + cy,
        (box[2] - cx) * scale + cx,
        (box[3] - cy) * scale + cy,
    )


def scale_jitter(sample: SceneSample, scale: float) -> SceneSample:
    """Rescale content about the image centre; no-op if any box would clip."""
    w, h = sample.width, sample.height
    cx, cy = w / 2, h / 2
    annotations: list[Annotation] = []
    for ann in sample.annotations:
        human = _scale_box(ann.human_box, scale, cx, cy)
        obj = _scale_box(ann.object_box, scale, cx, cy)
        for box in (human, obj):
            if box[0] < 0 or box[1] < 0 or box[2] > w or box[3] > h:
                return sample
        annotations.append(ann.model_copy(update={"human_box": human, "object_box": obj}))

    pixels = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
    border = tuple(int(c) for c in np.median(pixels[0], axis=0))
    img = Image.fromarray(pixels)
    inv = 1.0 / scale
    warped = img.transform(
        (w, h),
        Image.Transform.AFFINE,
        data=(inv, 0.0, cx - cx * inv, 0.0, inv, cy - cy * inv),
        resample=Image.Resampling.BILINEAR,
        fillcolor=border,
    )
    image = np.asarray(warped, dtype=np.float32) / 255.0
    return SceneSample(image=image, annotations=annotations, image_id=sample.image_id)


def augment_sample(
    sample: SceneSample,
    ls: LabelSpace,
    rng: np.random.Generator,
    *,
    verb_flip: dict[int, int] | None,
    max_scale: float,
) -> SceneSample:
    if verb_flip is not None and rng.random() < 0.5:
        sample = hflip(sample, ls, verb_flip)
    if max_scale > 0:
        sample = scale_jitter(sample, float(rng.uniform(1.0 - max_scale, 1.0 + max_scale)))
    return sample
