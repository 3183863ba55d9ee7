"""In-memory training/evaluation datasets built from manifests."""

from __future__ import annotations

from collections.abc import Collection, Sequence
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import Dataset

from genhoi.config import DataConfig
from genhoi.data.augment import augment_sample, flip_verb_map
from genhoi.data.generator import resolve_verb_rules
from genhoi.data.manifest import Manifest, SceneSample, load_manifest, load_sample
from genhoi.label_space import LabelSpace
from genhoi.utils.logging import get_logger

logger = get_logger(__name__)


def restrict_labels(sample: SceneSample, allowed: Collection[int]) -> SceneSample:
    """Drop HOI ids outside ``allowed`` and annotations left without labels."""
    annotations = []
    for ann in sample.annotations:
        kept = tuple(h for h in ann.hoi_ids if h in allowed)
        if kept:
            if kept != ann.hoi_ids:
                ann = ann.model_copy(update={"hoi_ids": kept})
            annotations.append(ann)
    return SceneSample(image=sample.image, annotations=annotations, image_id=sample.image_id)


class HOIDataset(Dataset[SceneSample]):
    """Scene samples with optional seeded augmentation and label restriction.

    Augmentation for sample ``i`` in epoch ``e`` depends only on
    ``(seed, e, i)``.
    """

    def __init__(
        self,
        samples: Sequence[SceneSample],
        ls: LabelSpace,
        config: DataConfig | None = None,
        *,
        augment: bool = False,
        seed: int = 0,
        allowed: Collection[int] | None = None,
    ) -> None:
        self.ls = ls
        self.config = config or DataConfig()
        self.augment = augment and self.config.augment
        self.seed = seed
        self.epoch = 0
        self.allowed = frozenset(allowed) if allowed is not None else None
        if self.allowed is not None:
            samples = [restrict_labels(s, self.allowed) for s in samples]
        self.samples = list(samples)
        self.verb_flip: dict[int, int] | None = None
        if self.augment and self.config.flip:
            self.verb_flip = flip_verb_map(ls, resolve_verb_rules(ls, self.config.verb_rules))

    def __len__(self) -> int:
        return len(self.samples)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def restrict_to(self, allowed: Collection[int]) -> None:
        """Keep only HOI labels in ``allowed``, now and after every augmentation."""
        self.allowed = frozenset(allowed)
        self.samples = [restrict_labels(s, self.allowed) for s in self.samples]

    def __getitem__(self, index: int) -> SceneSample:
        sample = self.samples[index]
        if not self.augment:
            return sample
        rng = np.random.default_rng([self.seed, self.epoch, index])
        out = augment_sample(
            sample, self.ls, rng, verb_flip=self.verb_flip, max_scale=self.config.scale_jitter
        )
        if self.allowed is not None:
            out = restrict_labels(out, self.allowed)
        return out

    @classmethod
    def from_manifest(
        cls,
        path: Path,
        ls: LabelSpace,
        config: DataConfig | None = None,
        **kwargs,
    ) -> HOIDataset:
        manifest = load_manifest(path, ls)
        samples = load_samples(manifest, path.parent)
        logger.info("Loaded %d images from %s", len(samples), path)
        return cls(samples, ls, config, **kwargs)


def load_samples(manifest: Manifest, root: Path) -> list[SceneSample]:
    return [load_sample(record, root) for record in manifest.images]


def collate_images(samples: Sequence[SceneSample]) -> torch.Tensor:
    """Stack rasters into a ``(B, 3, H, W)`` float tensor."""
    array = np.stack([s.image for s in samples]).astype(np.float32)
    return torch.from_numpy(array).permute(0, 3, 1, 2).contiguous()
