"""Configuration management.

Two layers:

- ``Settings``: machine-level settings (data root, runs root, device) read from
  ``GENHOI_*`` environment variables and the user config file.
- ``RunConfig``: the experiment description (model shape, loss weights, optimizer,
  dataset, split, embeddings, ablation switches) loaded from JSON or YAML. Its
  canonical hash is stamped on every artifact a run produces.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from enum import StrEnum
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic.fields import FieldInfo
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from genhoi.errors import ConfigError


DATA_DIR_ENV = "GENHOI_DATA_DIR"


def get_default_config_dir() -> Path:
    """Get the default configuration directory."""
    if sys.platform == "darwin":
        config_dir = Path.home() / "Library" / "Application Support" / "genhoi"
    elif sys.platform == "win32":
        config_dir = Path(os.environ.get("APPDATA", Path.home())) / "genhoi"
    else:
        config_dir = Path(os.environ.get("XDG_CONFIG_HOME") or Path.home() / ".config") / "genhoi"

    config_dir.mkdir(parents=True, exist_ok=True)
    return config_dir


def get_default_data_dir() -> Path:
    """Get the default dataset root."""
    base = os.environ.get("XDG_DATA_HOME") or str(Path.home() / ".local" / "share")
    return Path(base) / "genhoi" / "data"


def get_config_file_path() -> Path:
    return get_default_config_dir() / "config.json"


def load_config() -> dict:
    """Load settings from the JSON user config file."""
    config_path = get_config_file_path()
    if config_path.exists():
        try:
            with open(config_path, encoding="utf-8") as f:
                data = json.load(f)
                for key in ("data_dir", "runs_dir"):
                    if key in data and isinstance(data[key], str):
                        data[key] = Path(data[key]).expanduser()
                return data
        except (json.JSONDecodeError, OSError):
            return {}
    return {}


class UserConfigSource(PydanticBaseSettingsSource):
    """Values saved with ``save_config()``, ranked below the environment."""

    def get_field_value(self, field: FieldInfo, field_name: str) -> tuple[Any, str, bool]:
        return load_config().get(field_name), field_name, False

    def __call__(self) -> dict[str, Any]:
        return {
            key: value
            for key, value in load_config().items()
            if key in self.settings_cls.model_fields and value is not None
        }


class Settings(BaseSettings):
    """Machine-level settings.

    Sources, highest first: keyword arguments, ``GENHOI_*`` variables, ``.env``, the
    user config file, then defaults.
    """

    model_config = SettingsConfigDict(
        env_prefix="GENHOI_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    data_dir: Path = Field(default_factory=get_default_data_dir)
    runs_dir: Path | None = Field(default=None)
    device: Literal["cpu", "cuda", "auto"] = Field(default="cpu")
    num_threads: int | None = Field(default=None, ge=1)
    config_dir: Path = Field(default_factory=get_default_config_dir)

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        if self.runs_dir is None:
            self.runs_dir = self.data_dir.parent / "runs"

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            env_settings,
            dotenv_settings,
            UserConfigSource(settings_cls),
            file_secret_settings,
        )


def save_config(settings: Settings) -> None:
    """Save user-facing settings to the JSON config file."""
    config_path = get_config_file_path()
    config_data = {
        "data_dir": str(settings.data_dir),
        "runs_dir": str(settings.runs_dir),
        "device": settings.device,
        "num_threads": settings.num_threads,
    }
    config_path.parent.mkdir(parents=True, exist_ok=True)
    with open(config_path, "w", encoding="utf-8") as f:
        json.dump(config_data, f, indent=2)


_settings: Settings | None = None


def get_settings() -> Settings:
    """Get the global settings instance; the saved user config fills unset fields."""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def update_settings(**kwargs) -> Settings:
    """Replace the global settings instance."""
    global _settings
    _settings = Settings(**kwargs)
    return _settings


class ClassifierMode(StrEnum):
    TRIPLET = "triplet"
    VERB = "verb"


class MimicNorm(StrEnum):
    L1 = "l1"
    L2 = "l2"
    L1_L2 = "l1+l2"


class ZeroShotSetting(StrEnum):
    RF_UC = "RF-UC"
    NF_UC = "NF-UC"
    UO = "UO"
    UV = "UV"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelConfig(_Section):
    num_queries: int = Field(default=16, ge=1)
    hidden_dim: int = Field(default=64, ge=4)
    num_heads: int = Field(default=4, ge=1)
    num_decoder_layers: int = Field(default=3, ge=1)
    num_encoder_layers: int = Field(default=2, ge=0)
    ffn_dim: int = Field(default=128, ge=1)
    backbone_channels: tuple[int, ...] = (32, 64, 64, 64)
    backbone_strides: tuple[int, ...] = (2, 2, 2, 1)
    image_size: int = Field(default=64, ge=1)
    classifier_mode: ClassifierMode = ClassifierMode.TRIPLET
    use_pge: bool = True
    use_ige: bool = True
    activation: Literal["relu", "gelu"] = "relu"

    @model_validator(mode="after")
    def _check_shapes(self) -> ModelConfig:
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} must be divisible by num_heads {self.num_heads}"
            )
        if self.hidden_dim % 4 != 0:
            raise ValueError("hidden_dim must be a multiple of 4 for the 2D sine encoding")
        if len(self.backbone_channels) != len(self.backbone_strides):
            raise ValueError("backbone_channels and backbone_strides must have equal length")
        if not self.backbone_channels:
            raise ValueError("backbone needs at least one block")
        return self

    @property
    def total_stride(self) -> int:
        stride = 1
        for s in self.backbone_strides:
            stride *= s
        return stride

    @classmethod
    def preset(cls, size: str, **overrides: Any) -> ModelConfig:
        """Model-size presets: s (3 layers), m (3 layers, wider), l (6 layers, wider)."""
        presets: dict[str, dict[str, Any]] = {
            "s": {},
            "m": {"hidden_dim": 128, "ffn_dim": 256, "backbone_channels": (32, 64, 128, 128)},
            "l": {
                "hidden_dim": 128,
                "ffn_dim": 256,
                "num_decoder_layers": 6,
                "backbone_channels": (32, 64, 128, 128),
            },
        }
        if size not in presets:
            raise ConfigError(f"Unknown model size preset: {size!r} (expected s, m or l)")
        return cls(**{**presets[size], **overrides})


class LossWeights(_Section):
    lambda_b: float = Field(default=2.5, ge=0.0)
    lambda_u: float = Field(default=1.0, ge=0.0)
    lambda_c_o: float = Field(default=1.0, ge=0.0)
    lambda_c_a: float = Field(default=1.0, ge=0.0)
    lambda_mimic: float = Field(default=20.0, ge=0.0)
    focal_alpha: float = Field(default=0.25, ge=0.0, le=1.0)
    focal_gamma: float = Field(default=2.0, ge=0.0)
    no_object_weight: float = Field(default=0.1, ge=0.0)


class OptimConfig(_Section):
    lr: float = Field(default=1e-4, gt=0.0)
    text_lr: float = Field(default=1e-5, gt=0.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    epochs: int = Field(default=60, ge=1)
    batch_size: int = Field(default=16, ge=1)
    lr_drop_fraction: float = Field(default=2 / 3, gt=0.0, le=1.0)
    clip_max_norm: float = Field(default=0.1, ge=0.0)
    checkpoint_every: int = Field(default=0, ge=0)
    max_steps: int | None = Field(default=None, ge=1)

    @property
    def lr_drop_epoch(self) -> int:
        return max(1, int(self.epochs * self.lr_drop_fraction))


class GeometryRules(_Section):
    """Thresholds of the verb geometry predicates, all relative to box sizes."""

    hold_overlap: float = Field(default=0.5, gt=0.0, le=1.0)
    ride_alignment: float = Field(default=0.5, gt=0.0)
    ride_contact: float = Field(default=0.25, gt=0.0)
    adjacent_gap: float = Field(default=0.5, gt=0.0)
    vertical_alignment: float = Field(default=0.25, gt=0.0)
    far_factor: float = Field(default=1.0, gt=0.0)


class DataConfig(_Section):
    name: str = "toy"
    data_dir: Path | None = None
    label_space: str = "toy"
    n_train: int = Field(default=2000, ge=1)
    n_test: int = Field(default=200, ge=0)
    long_tail_exponent: float = Field(default=1.0, ge=0.0)
    max_annotations: int = Field(default=2, ge=1, le=2)
    retry_budget: int = Field(default=50, ge=1)
    verb_rules: dict[str, str] = Field(
        default_factory=lambda: {
            "hold": "overlap",
            "ride": "above",
            "push": "adjacent_left",
            "pull": "adjacent_right",
            "no_interaction": "far",
        }
    )
    rules: GeometryRules = Field(default_factory=GeometryRules)
    augment: bool = True
    flip: bool = True
    scale_jitter: float = Field(default=0.1, ge=0.0, lt=0.5)
    workers: int = Field(default=1, ge=1)


class SplitConfig(_Section):
    setting: ZeroShotSetting | None = None
    n_unseen: int = Field(default=120, ge=0)
    unseen_objects: tuple[int, ...] | None = None
    unseen_verbs: tuple[int, ...] | None = None
    n_unseen_verbs: int | None = Field(default=None, ge=1)
    path: Path | None = None

    @property
    def zero_shot(self) -> bool:
        return self.setting is not None or self.path is not None


class EmbeddingConfig(_Section):
    provider: str = "synthetic"
    dim: int = Field(default=64, ge=8)
    seed: int = 0
    mix_verb: float = 1.0
    mix_object: float = 1.0
    mix_context: float = 0.5
    theta: float = Field(default=100.0, gt=0.0)
    store_dir: Path | None = None


class AblationSwitches(_Section):
    use_interaction_text: bool = True
    use_object_text: bool = True
    use_mimic: bool = True
    mimic_norm: MimicNorm = MimicNorm.L1
    random_unseen_rows: bool = False


class InferenceConfig(_Section):
    top_k: int = Field(default=100, ge=1)
    nms_threshold: float = Field(default=0.7, gt=0.0, le=1.0)


class RunConfig(_Section):
    name: str = "toy"
    seed: int = 42
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    embedding: EmbeddingConfig = Field(default_factory=EmbeddingConfig)
    ablation: AblationSwitches = Field(default_factory=AblationSwitches)
    inference: InferenceConfig = Field(default_factory=InferenceConfig)

    @classmethod
    def preset(cls, name: str) -> RunConfig:
        """Named presets: ``toy`` (desk-scale synthetic run) and ``hico`` (fixture taxonomy)."""
        if name == "toy":
            return cls(split=SplitConfig(n_unseen=3))
        if name == "hico":
            return cls(
                name="hico",
                model=ModelConfig(num_queries=64),
                data=DataConfig(name="hico", label_space="hico"),
            )
        raise ConfigError(f"Unknown preset: {name!r} (expected toy or hico)")

    @classmethod
    def from_file(cls, path: Path) -> RunConfig:
        return load_run_config(path)

    def with_updates(self, **sections: Any) -> RunConfig:
        """Return a copy with whole fields or nested section fields replaced.

        ``cfg.with_updates(seed=1, optim={"epochs": 3})`` merges ``epochs`` into the
        existing optimizer section.
        """
        data = self.model_dump(mode="python")
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        return RunConfig.model_validate(data)


def load_run_config(path: Path) -> RunConfig:
    """Load a RunConfig from ``.json``, ``.yaml`` or ``.yml``.

    Raises:
        ConfigError: On unreadable files or schema violations.
    """
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except (OSError, json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}: {e}") from e


def save_run_config(config: RunConfig, path: Path) -> None:
    data = config.model_dump(mode="json")
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() in (".yaml", ".yml"):
        path.write_text(yaml.safe_dump(data, sort_keys=True), encoding="utf-8")
    else:
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def resolve_data_dir(config: RunConfig, settings: Settings | None = None) -> Path:
    """Dataset root.

    ``GENHOI_DATA_DIR`` in the environment wins over the run config's ``data.data_dir``.
    Otherwise the explicit path is used, else ``<settings.data_dir>/<data.name>``.
    """
    settings = settings or get_settings()
    if config.data.data_dir is not None and DATA_DIR_ENV not in os.environ:
        return config.data.data_dir
    return settings.data_dir / config.data.name
