"""Unit tests for ProviderRegistry."""

from __future__ import annotations

from collections.abc import Generator
from typing import ClassVar

import numpy as np
import pytest

from genhoi.config import EmbeddingConfig
from genhoi.embeddings.providers import (
    EmbeddingProvider,
    FileEmbeddingProvider,
    SyntheticTextProvider,
)
from genhoi.errors import EmbeddingError, GenHOIError
from genhoi.registry import ProviderRegistry, RegistrationError


class _ConstantProvider(EmbeddingProvider):
    PROVIDER_NAME: ClassVar[str] = "constant"

    @property
    def dim(self) -> int:
        return 8

    def embed_text(self, prompt: str) -> np.ndarray:
        return np.full(8, 8**-0.5, dtype=np.float32)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        return np.full(8, 8**-0.5, dtype=np.float32)

    @classmethod
    def from_config(cls, config: EmbeddingConfig) -> _ConstantProvider:
        return cls()


class TestProviderRegistry:
    """Tests for ProviderRegistry class."""

    @pytest.fixture(autouse=True)
    def restore_registry(self) -> Generator[None, None, None]:
        """Restore the built-in providers after each test."""
        saved = dict(ProviderRegistry._providers)
        yield
        ProviderRegistry._providers.clear()
        ProviderRegistry._providers.update(saved)

    def test_builtin_providers_registered(self) -> None:
        """Should know the synthetic and file providers."""
        assert ProviderRegistry.get("synthetic") is SyntheticTextProvider
        assert ProviderRegistry.get("file") is FileEmbeddingProvider

    def test_register_decorator_stores_provider(self) -> None:
        """Should register a provider via decorator."""
        ProviderRegistry.register(_ConstantProvider)
        assert ProviderRegistry.get("constant") is _ConstantProvider
        assert "constant" in ProviderRegistry.names()

    def test_register_prevents_duplicate_names(self) -> None:
        """Should raise RegistrationError when registering a duplicate name."""
        ProviderRegistry.register(_ConstantProvider)
        with pytest.raises(RegistrationError) as exc_info:
            ProviderRegistry.register(_ConstantProvider)
        assert "already registered" in str(exc_info.value)

    def test_get_unknown(self) -> None:
        """Should return None for unknown names."""
        assert ProviderRegistry.get("clip") is None

    def test_names_sorted(self) -> None:
        """Should list names in sorted order."""
        names = ProviderRegistry.names()
        assert names == sorted(names)

    def test_duplicate_is_a_package_error(self) -> None:
        """Should raise an error the CLI handler recognizes."""
        assert issubclass(RegistrationError, GenHOIError)

    def test_create_builds_named_provider(self) -> None:
        """Should build the provider the config names through its from_config()."""
        ProviderRegistry.register(_ConstantProvider)
        provider = ProviderRegistry.create(EmbeddingConfig(provider="constant"))
        assert isinstance(provider, _ConstantProvider)
        assert provider.dim == 8

    def test_create_synthetic_uses_config(self) -> None:
        """Should pass the seed and dimension through to the synthetic provider."""
        provider = ProviderRegistry.create(EmbeddingConfig(provider="synthetic", dim=16, seed=3))
        assert isinstance(provider, SyntheticTextProvider)
        assert provider.dim == 16
        assert provider.seed == 3

    def test_create_unknown_lists_available(self) -> None:
        """Should raise EmbeddingError naming the registered providers."""
        with pytest.raises(EmbeddingError) as exc_info:
            ProviderRegistry.create(EmbeddingConfig(provider="clip"))
        assert "file, synthetic" in str(exc_info.value)
