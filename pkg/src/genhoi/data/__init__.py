from genhoi.data.generator import DatasetSpec, SceneGenerator, generate_dataset, generate_samples
from genhoi.data.manifest import Annotation, ImageRecord, Manifest, SceneSample
from genhoi.data.toy import toy_label_space

__all__ = [
    "Annotation",
    "DatasetSpec",
    "ImageRecord",
    "Manifest",
    "SceneGenerator",
    "SceneSample",
    "generate_dataset",
    "generate_samples",
    "toy_label_space",
]
