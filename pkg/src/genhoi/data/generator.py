"""Procedural HOI scene generator.

Each image holds one or two human-object pairs. A target triplet is drawn from
a long-tailed distribution, the pair is placed so the target verb's geometry
rule holds, and the stored labels are exactly the verbs whose rules hold on the
placed boxes. Samples whose labels include a triplet missing from the label
space are rejected and re-drawn, up to a retry budget.
"""

from __future__ import annotations

from collections.abc import Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from genhoi.config import DataConfig
from genhoi.data.geometry import (
    Box,
    PlacementRejected,
    RuleKind,
    box_distance,
    place_pair,
    rule_holds,
    union_box,
)
from genhoi.data.manifest import Annotation, Manifest, SceneSample, save_image, save_manifest
from genhoi.data.toy import PERSON_COLOR, glyph_for
from genhoi.errors import GenerationError, LabelSpaceError
from genhoi.events import GENERATION_PROGRESS, EventBus
from genhoi.label_space import LabelSpace, save_label_space
from genhoi.utils.logging import get_logger

logger = get_logger(__name__)

BACKGROUND = (236, 234, 224)


@dataclass(frozen=True)
class DatasetSpec:
    n_images: int
    image_size: int
    long_tail_exponent: float
    seed: int
    config: DataConfig
    prefix: str = "img"


def resolve_verb_rules(ls: LabelSpace, verb_rules: dict[str, str]) -> dict[int, RuleKind]:
    """Map verb ids to geometry rules; verbs without a rule are never generated."""
    names = {v.name: v.id for v in ls.verbs}
    resolved: dict[int, RuleKind] = {}
    for verb_name, kind in verb_rules.items():
        if verb_name not in names:
            continue
        try:
            resolved[names[verb_name]] = RuleKind(kind)
        except ValueError as e:
            raise LabelSpaceError(f"Unknown geometry rule {kind!r} for verb {verb_name!r}") from e
    if not resolved:
        raise LabelSpaceError("No verb of the label space has a geometry rule")
    return resolved


def interacting_verbs(
    human: Box, obj: Box, rules_by_verb: dict[int, RuleKind], config: DataConfig
) -> list[int]:
    return [
        v
        for v, kind in sorted(rules_by_verb.items())
        if rule_holds(kind, human, obj, config.rules)
    ]


def long_tail_probabilities(n: int, exponent: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded rank permutation and ``p ∝ (rank + 1) ** -exponent`` per candidate index."""
    rng = np.random.default_rng([seed, 0x7A11])
    ranks = rng.permutation(n)
    weights = (ranks + 1.0) ** (-exponent)
    return ranks, weights / weights.sum()


class SceneGenerator:
    """Deterministic scene generator; image ``i`` only depends on ``(seed, i)``."""

    def __init__(self, spec: DatasetSpec, ls: LabelSpace) -> None:
        self.spec = spec
        self.ls = ls
        self.rules_by_verb = resolve_verb_rules(ls, spec.config.verb_rules)
        self.candidates = [t.id for t in ls.triplets if t.verb_id in self.rules_by_verb]
        if not self.candidates:
            raise LabelSpaceError("No triplet can be generated with the configured verb rules")
        _, self.probabilities = long_tail_probabilities(
            len(self.candidates), spec.long_tail_exponent, spec.seed
        )

    def _labels(self, human: Box, obj: Box, object_id: int) -> tuple[int, ...]:
        verbs = interacting_verbs(human, obj, self.rules_by_verb, self.spec.config)
        if not verbs:
            raise PlacementRejected("no verb rule holds")
        hoi_ids = []
        for verb_id in verbs:
            hoi_id = self.ls.triplet_index.get((verb_id, object_id))
            if hoi_id is None:
                raise PlacementRejected(
                    f"labels include missing triplet ({self.ls.verbs[verb_id].name}, "
                    f"{self.ls.objects[object_id].name})"
                )
            hoi_ids.append(hoi_id)
        return tuple(sorted(hoi_ids))

    def _draw_pair(self, rng: np.random.Generator, avoid: list[Box]) -> Annotation:
        target = self.candidates[int(rng.choice(len(self.candidates), p=self.probabilities))]
        triplet = self.ls.triplets[target]
        kind = self.rules_by_verb[triplet.verb_id]
        human, obj = place_pair(kind, rng, self.spec.image_size, self.spec.config.rules)
        region = union_box(human, obj)
        for other in avoid:
            if box_distance(region, other) < 2.0:
                raise PlacementRejected("pair collides with an earlier pair")
        hoi_ids = self._labels(human, obj, triplet.object_id)
        return Annotation(
            human_box=human, object_box=obj, object_id=triplet.object_id, hoi_ids=hoi_ids
        )

    def _retrying(self) -> Retrying:
        return Retrying(
            stop=stop_after_attempt(self.spec.config.retry_budget),
            retry=retry_if_exception_type(PlacementRejected),
            reraise=True,
        )

    def annotations_for(self, index: int) -> list[Annotation]:
        rng = np.random.default_rng([self.spec.seed, index])
        n_pairs = 1 if self.spec.config.max_annotations == 1 else int(rng.integers(1, 3))
        try:
            first = self._retrying()(self._draw_pair, rng, [])
        except PlacementRejected as e:
            raise GenerationError(
                f"Sample {index}: no valid placement after "
                f"{self.spec.config.retry_budget} attempts ({e})",
                sample_index=index,
                attempts=self.spec.config.retry_budget,
            ) from e
        annotations = [first]
        if n_pairs == 2:
            avoid = [union_box(first.human_box, first.object_box)]
            try:
                annotations.append(self._retrying()(self._draw_pair, rng, avoid))
            except PlacementRejected:
                logger.debug("Sample %d: second pair dropped", index)
        return annotations

    def render(self, annotations: list[Annotation], index: int) -> np.ndarray:
        rng = np.random.default_rng([self.spec.seed, index, 1])
        size = self.spec.image_size
        img = Image.new("RGB", (size, size), BACKGROUND)
        draw = ImageDraw.Draw(img)
        for ann in annotations:
            draw_person(draw, ann.human_box)
            draw_object(draw, ann.object_box, glyph_for(self.ls, ann.object_id))
        pixels = np.asarray(img, dtype=np.int16)
        noise = rng.integers(-6, 7, size=pixels.shape)
        return (np.clip(pixels + noise, 0, 255).astype(np.uint8)).astype(np.float32) / 255.0

    def sample(self, index: int) -> SceneSample:
        annotations = self.annotations_for(index)
        image = self.render(annotations, index)
        return SceneSample(
            image=image, annotations=annotations, image_id=f"{self.spec.prefix}_{index:06d}"
        )

    def __iter__(self) -> Iterator[SceneSample]:
        for index in range(self.spec.n_images):
            yield self.sample(index)


def draw_person(draw: ImageDraw.ImageDraw, box: Box) -> None:
    x1, y1, x2, y2 = box
    head = min(x2 - x1, (y2 - y1) / 3)
    cx = (x1 + x2) / 2
    draw.ellipse([cx - head / 2, y1, cx + head / 2 - 1, y1 + head - 1], fill=PERSON_COLOR)
    draw.rectangle([x1, y1 + head, x2 - 1, y2 - 1], fill=PERSON_COLOR)


def draw_object(draw: ImageDraw.ImageDraw, box: Box, glyph) -> None:
    x1, y1, x2, y2 = box[0], box[1], box[2] - 1, box[3] - 1
    cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
    if glyph.shape == "circle":
        draw.ellipse([x1, y1, x2, y2], fill=glyph.color)
    elif glyph.shape == "square":
        draw.rectangle([x1, y1, x2, y2], fill=glyph.color)
    elif glyph.shape == "triangle":
        draw.polygon([(x1, y2), (x2, y2), (cx, y1)], fill=glyph.color)
    else:
        draw.polygon([(cx, y1), (x2, cy), (cx, y2), (x1, cy)], fill=glyph.color)


def generate_samples(spec: DatasetSpec, ls: LabelSpace) -> list[SceneSample]:
    """Generate ``spec.n_images`` samples in memory."""
    generator = SceneGenerator(spec, ls)
    if spec.config.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.config.workers) as pool:
            return list(pool.map(generator.sample, range(spec.n_images)))
    return list(generator)


def generate_dataset(
    spec: DatasetSpec,
    ls: LabelSpace,
    output_dir: Path,
    *,
    manifest_name: str = "manifest.json",
    config_hash: str | None = None,
    event_bus: EventBus | None = None,
) -> Manifest:
    """Render a dataset to ``output_dir`` and write its manifest.

    Writes ``label_space.json``, one PNG per image under ``images/`` and the
    manifest. Identical spec and seed give bit-identical manifests.
    """
    generator = SceneGenerator(spec, ls)
    output_dir.mkdir(parents=True, exist_ok=True)
    label_space_path = output_dir / "label_space.json"
    save_label_space(ls, label_space_path)

    def _one(index: int):
        sample = generator.sample(index)
        file = f"images/{sample.image_id}.png"
        save_image(sample.image, output_dir / file)
        return sample.to_record(file)

    records = []
    if spec.config.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.config.workers) as pool:
            for i, record in enumerate(pool.map(_one, range(spec.n_images))):
                records.append(record)
                if event_bus:
                    event_bus.emit(GENERATION_PROGRESS, {"done": i + 1, "total": spec.n_images})
    else:
        for i in range(spec.n_images):
            records.append(_one(i))
            if event_bus:
                event_bus.emit(GENERATION_PROGRESS, {"done": i + 1, "total": spec.n_images})

    manifest = Manifest(
        label_space_path=label_space_path.name, images=records, config_hash=config_hash
    )
    save_manifest(manifest, output_dir / manifest_name)
    counts = manifest.hoi_counts(ls.num_triplets)
    logger.info(
        "Generated %d images (%d annotations) into %s",
        len(records),
        sum(len(r.annotations) for r in records),
        output_dir,
        extra={"hoi_counts": counts},
    )
    return manifest
