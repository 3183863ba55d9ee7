"""Dataset manifest schema and in-memory scene samples."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from genhoi.errors import ManifestError
from genhoi.label_space import LabelSpace

BoxT = tuple[float, float, float, float]


class Annotation(BaseModel):
    """One human-object pair with its multi-label HOI set. Boxes are pixel corners."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    human_box: BoxT
    object_box: BoxT
    object_id: int = Field(ge=0)
    hoi_ids: tuple[int, ...]

    @field_validator("human_box", "object_box")
    @classmethod
    def _positive_area(cls, box: BoxT) -> BoxT:
        x1, y1, x2, y2 = box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate box {box}: need x1<x2 and y1<y2")
        return box


class ImageRecord(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    image_id: str
    file: str
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    annotations: tuple[Annotation, ...] = ()

    @model_validator(mode="after")
    def _boxes_inside(self) -> ImageRecord:
        for ann in self.annotations:
            for box in (ann.human_box, ann.object_box):
                if box[0] < 0 or box[1] < 0 or box[2] > self.width or box[3] > self.height:
                    raise ValueError(
                        f"box {box} of image {self.image_id} leaves the "
                        f"{self.width}x{self.height} frame"
                    )
        return self


class Manifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label_space_path: str
    images: list[ImageRecord] = Field(default_factory=list)
    config_hash: str | None = None

    def validate_against(self, ls: LabelSpace) -> None:
        """Check HOI ids and their object consistency against ``ls``.

        Raises:
            ManifestError: On unknown or inconsistent ids, or duplicate image ids.
        """
        seen_ids: set[str] = set()
        for record in self.images:
            if record.image_id in seen_ids:
                raise ManifestError(f"Duplicate image_id {record.image_id!r}")
            seen_ids.add(record.image_id)
            for ann in record.annotations:
                if ann.object_id >= ls.num_objects:
                    raise ManifestError(
                        f"Image {record.image_id}: unknown object_id {ann.object_id}"
                    )
                for hoi_id in ann.hoi_ids:
                    if not 0 <= hoi_id < ls.num_triplets:
                        raise ManifestError(f"Image {record.image_id}: unknown hoi_id {hoi_id}")
                    if ls.expansion_map[hoi_id] != ann.object_id:
                        raise ManifestError(
                            f"Image {record.image_id}: hoi_id {hoi_id} "
                            f"({ls.describe(hoi_id)}) does not match object_id {ann.object_id}"
                        )

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.image_id: r for r in self.images}

    def hoi_counts(self, num_triplets: int) -> list[int]:
        """Instances per HOI id, one per (annotation, hoi_id)."""
        counts = [0] * num_triplets
        for record in self.images:
            for ann in record.annotations:
                for hoi_id in ann.hoi_ids:
                    counts[hoi_id] += 1
        return counts


def load_manifest(path: Path, ls: LabelSpace | None = None) -> Manifest:
    try:
        manifest = Manifest.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ManifestError(f"Cannot read manifest {path}: {e}") from e
    except ValidationError as e:
        raise ManifestError(f"Invalid manifest {path}: {e}") from e
    if ls is not None:
        manifest.validate_against(ls)
    return manifest


def save_manifest(manifest: Manifest, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = manifest.model_dump(mode="json")
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


@dataclass
class SceneSample:
    """An image raster in [0, 1] (H x W x 3, float32) with its annotations."""

    image: np.ndarray
    annotations: list[Annotation] = field(default_factory=list)
    image_id: str = ""

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    @property
    def hoi_ids(self) -> list[int]:
        return [h for ann in self.annotations for h in ann.hoi_ids]

    def to_record(self, file: str) -> ImageRecord:
        return ImageRecord(
            image_id=self.image_id,
            file=file,
            width=self.width,
            height=self.height,
            annotations=tuple(self.annotations),
        )


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def save_image(image: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path, format="PNG")


def load_sample(record: ImageRecord, root: Path) -> SceneSample:
    image = load_image(root / record.file)
    if image.shape[:2] != (record.height, record.width):
        raise ManifestError(
            f"Image {record.file} is {image.shape[1]}x{image.shape[0]}, manifest says "
            f"{record.width}x{record.height}"
        )
    return SceneSample(image=image, annotations=list(record.annotations), image_id=record.image_id)
