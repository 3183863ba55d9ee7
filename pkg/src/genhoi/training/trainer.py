"""Optimization loop."""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from genhoi.config import RunConfig, config_hash
from genhoi.data.dataset import HOIDataset, collate_images
from genhoi.data.manifest import SceneSample
from genhoi.data.teacher import FileTeacher, synthetic_teacher
from genhoi.embeddings.classifier import replace_rows
from genhoi.embeddings.prompts import BACKGROUND_PROMPT
from genhoi.embeddings.providers import EmbeddingProvider
from genhoi.errors import TrainingDivergedError
from genhoi.events import CHECKPOINT_SAVED, EPOCH_END, TRAIN_DIVERGED, TRAIN_STEP, EventBus
from genhoi.label_space import LabelSpace, SplitSpec
from genhoi.model.checkpoint import save_checkpoint
from genhoi.model.gen import GEN
from genhoi.training.losses import compute_losses
from genhoi.training.targets import build_target, output_columns
from genhoi.utils.logging import get_logger

logger = get_logger(__name__)

CHECKPOINT_NAME = "checkpoint.ghck"
METRICS_NAME = "metrics.ndjson"


@dataclass
class TrainResult:
    steps: int
    losses: list[float] = field(default_factory=list)
    checkpoint: Path | None = None
    metrics_path: Path | None = None
    config_hash: str = ""


class MetricsLog:
    """Newline-delimited JSON metrics: a header record, then one record per step."""

    def __init__(self, path: Path, header: dict[str, Any]) -> None:
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps({"type": "header", **header}, sort_keys=True) + "\n")

    def __call__(self, record: dict[str, Any]) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps({"type": "step", **record}, sort_keys=True) + "\n")


def resolve_device(name: str) -> torch.device:
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)


class Trainer:
    """Trains a GEN on an ``HOIDataset``.

    In zero-shot mode unseen HOI ids are removed from every target, the
    interaction classifier only produces the seen columns while training and
    teacher embeddings are built from seen labels.
    """

    def __init__(
        self,
        config: RunConfig,
        model: GEN,
        dataset: HOIDataset,
        ls: LabelSpace,
        *,
        provider: EmbeddingProvider | None = None,
        split: SplitSpec | None = None,
        run_dir: Path | None = None,
        event_bus: EventBus | None = None,
        file_teacher: FileTeacher | None = None,
        device: str = "cpu",
    ) -> None:
        self.config = config
        self.model = model
        self.dataset = dataset
        self.ls = ls
        self.provider = provider
        self.split = split
        self.run_dir = run_dir
        self.event_bus = event_bus or EventBus()
        self.file_teacher = file_teacher
        self.device = resolve_device(device)
        self.hash = config_hash(config)
        self.seen: list[int] | None = None

        if split is not None and split.is_zero_shot:
            self.seen = split.seen_ids
            dataset.restrict_to(self.seen)
            classifier = model.interaction_classifier
            if classifier is not None:
                classifier.set_active_rows(self.seen)
                if config.ablation.random_unseen_rows:
                    generator = torch.Generator().manual_seed(config.seed + 1)
                    replace_rows(classifier, sorted(split.unseen), generator)

        self.use_mimic = config.ablation.use_mimic
        if self.use_mimic and provider is None and file_teacher is None:
            logger.warning("No embedding provider or teacher file; mimic loss disabled")
            self.use_mimic = False
        if self.use_mimic and provider is not None:
            # images whose labels are all filtered out fall back to the background prompt
            provider.embed_text(BACKGROUND_PROMPT)

        self.optimizer = self._build_optimizer()
        self.scheduler = torch.optim.lr_scheduler.StepLR(
            self.optimizer, step_size=config.optim.lr_drop_epoch, gamma=0.1
        )

    def _build_optimizer(self) -> torch.optim.Optimizer:
        optim = self.config.optim
        text_rows = {id(p) for p in self.model.classifier_parameters()}
        base = [p for p in self.model.parameters() if p.requires_grad and id(p) not in text_rows]
        groups: list[dict[str, Any]] = [{"params": base, "lr": optim.lr}]
        text = [p for p in self.model.classifier_parameters() if p.requires_grad]
        if text:
            groups.append({"params": text, "lr": optim.text_lr, "weight_decay": 0.0})
        return torch.optim.AdamW(groups, lr=optim.lr, weight_decay=optim.weight_decay)

    def _columns(self) -> list[int]:
        active = None
        if self.model.interaction_classifier is not None:
            active = self.model.interaction_classifier.output_rows()
        return output_columns(self.ls, self.config.model.classifier_mode, active)

    def _teacher(self, samples: list[SceneSample], dtype: torch.dtype) -> torch.Tensor | None:
        if not self.use_mimic:
            return None
        rows = []
        for sample in samples:
            if self.file_teacher is not None and sample.image_id in self.file_teacher:
                rows.append(self.file_teacher(sample.image_id).vector)
            elif self.provider is not None:
                rows.append(
                    synthetic_teacher(sample, self.provider, self.ls, allowed=self.seen).vector
                )
            else:
                return None
        return torch.from_numpy(np.stack(rows)).to(device=self.device, dtype=dtype)

    def _batches(self, epoch: int) -> list[list[int]]:
        order = np.random.default_rng([self.config.seed, epoch]).permutation(len(self.dataset))
        size = self.config.optim.batch_size
        return [order[i : i + size].tolist() for i in range(0, len(order), size)]

    def step(self, samples: list[SceneSample], step: int) -> dict[str, float]:
        """One optimizer step on ``samples``; returns the logged loss terms."""
        dtype = next(self.model.parameters()).dtype
        images = collate_images(samples).to(device=self.device, dtype=dtype)
        columns = self._columns()
        mode = self.config.model.classifier_mode
        targets = [
            build_target(s, self.ls, columns, mode, dtype=dtype).to(self.device) for s in samples
        ]
        output = self.model(images)
        losses = compute_losses(
            output,
            targets,
            self.config.loss,
            teacher=self._teacher(samples, dtype),
            mimic_norm=self.config.ablation.mimic_norm,
        )
        assert losses.total is not None
        value = float(losses.total.detach())
        if not math.isfinite(value):
            self.event_bus.emit(TRAIN_DIVERGED, {"step": step, "loss": value})
            raise TrainingDivergedError(step, value)
        self.optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        if self.config.optim.clip_max_norm > 0:
            nn.utils.clip_grad_norm_(
                [p for p in self.model.parameters() if p.requires_grad],
                self.config.optim.clip_max_norm,
            )
        self.optimizer.step()
        return losses.summary()

    def fit(self) -> TrainResult:
        config = self.config
        torch.manual_seed(config.seed)
        self.model.to(self.device)
        self.model.train()
        result = TrainResult(steps=0, config_hash=self.hash)
        scope = contextlib.ExitStack()
        if self.run_dir is not None:
            metrics = MetricsLog(
                self.run_dir / METRICS_NAME,
                {
                    "config_hash": self.hash,
                    "seed": config.seed,
                    "zero_shot": self.seen is not None,
                    "classifier_mode": str(config.model.classifier_mode),
                },
            )
            scope.enter_context(self.event_bus.subscribed(TRAIN_STEP, metrics, critical=True))
            result.metrics_path = metrics.path

        logger.info(
            "Training %d images for %d epochs (batch %d)",
            len(self.dataset),
            config.optim.epochs,
            config.optim.batch_size,
            extra={"config_hash": self.hash, "zero_shot": self.seen is not None},
        )
        with scope:
            for epoch in range(config.optim.epochs):
                self.dataset.set_epoch(epoch)
                for indices in self._batches(epoch):
                    samples = [self.dataset[i] for i in indices]
                    terms = self.step(samples, result.steps)
                    result.steps += 1
                    result.losses.append(terms["total"])
                    self.event_bus.emit(
                        TRAIN_STEP,
                        {
                            "step": result.steps,
                            "epoch": epoch,
                            "lr": self.optimizer.param_groups[0]["lr"],
                            **terms,
                        },
                    )
                    if self._done(result):
                        break
                self.scheduler.step()
                self.event_bus.emit(EPOCH_END, {"epoch": epoch, "steps": result.steps})
                if (
                    config.optim.checkpoint_every
                    and (epoch + 1) % config.optim.checkpoint_every == 0
                    and self.run_dir is not None
                ):
                    self._save(self.run_dir / f"checkpoint_epoch{epoch + 1:03d}.ghck", epoch)
                if self._done(result):
                    break

        if self.run_dir is not None:
            result.checkpoint = self.run_dir / CHECKPOINT_NAME
            self._save(result.checkpoint, config.optim.epochs - 1)
        logger.info(
            "Finished %d steps, final loss %.4f",
            result.steps,
            result.losses[-1] if result.losses else float("nan"),
        )
        return result

    def _done(self, result: TrainResult) -> bool:
        limit = self.config.optim.max_steps
        return limit is not None and result.steps >= limit

    def _save(self, path: Path, epoch: int) -> None:
        extra: dict[str, Any] = {"epoch": epoch}
        if self.split is not None:
            extra["split"] = self.split.to_dict()
        save_checkpoint(self.model, self.config, self.ls, path, extra=extra)
        self.event_bus.emit(CHECKPOINT_SAVED, {"path": str(path), "epoch": epoch})


def train(
    config: RunConfig,
    dataset: HOIDataset,
    model: GEN,
    ls: LabelSpace,
    provider: EmbeddingProvider | None = None,
    **kwargs: Any,
) -> TrainResult:
    return Trainer(config, model, dataset, ls, provider=provider, **kwargs).fit()

