"""Embedding provider registry."""

from __future__ import annotations

from typing import TYPE_CHECKING

from genhoi.errors import EmbeddingError, GenHOIError

if TYPE_CHECKING:
    from genhoi.config import EmbeddingConfig
    from genhoi.embeddings.providers import EmbeddingProvider


class RegistrationError(GenHOIError):
    """Raised when two providers claim the same ``PROVIDER_NAME``."""


class ProviderRegistry:
    """Embedding providers keyed by ``PROVIDER_NAME``.

    Providers self-register with the ``register`` class decorator, and ``create``
    builds the one an ``EmbeddingConfig`` names.
    """

    _providers: dict[str, type[EmbeddingProvider]] = {}

    @classmethod
    def register(cls, provider_cls: type[EmbeddingProvider]) -> type[EmbeddingProvider]:
        """Register a provider via decorator.

        Raises:
            RegistrationError: If a provider with the same name is already registered.
        """
        name = provider_cls.PROVIDER_NAME
        if name in cls._providers:
            raise RegistrationError(
                f"Embedding provider '{name}' is already registered; "
                f"cannot register {provider_cls.__name__}"
            )
        cls._providers[name] = provider_cls
        return provider_cls

    @classmethod
    def get(cls, name: str) -> type[EmbeddingProvider] | None:
        return cls._providers.get(name)

    @classmethod
    def names(cls) -> list[str]:
        return sorted(cls._providers)

    @classmethod
    def create(cls, config: EmbeddingConfig) -> EmbeddingProvider:
        """Build the provider named by ``config.provider``.

        Raises:
            EmbeddingError: On an unknown name, or when the provider rejects the config.
        """
        provider_cls = cls.get(config.provider)
        if provider_cls is None:
            raise EmbeddingError(
                f"Unknown embedding provider {config.provider!r}; "
                f"available: {', '.join(cls.names())}"
            )
        return provider_cls.from_config(config)
