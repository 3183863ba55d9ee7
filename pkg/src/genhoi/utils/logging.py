"""Structured logging configuration for genhoi.

Provides:
- JSON format for non-TTY (CI, batch jobs)
- Plain format for TTY (user-facing)
- TTY detection and NO_COLOR support
- run_id and stage correlation
- Queue-backed handler so training loops never block on log I/O
- Optional per-run JSON log file next to the run's metrics

Logs go to stderr; stdout is reserved for command output.
"""

from __future__ import annotations

import json
import logging
import logging.handlers
import queue
import sys
import uuid
from contextlib import contextmanager
from contextvars import ContextVar
from datetime import UTC, datetime
from enum import StrEnum
from pathlib import Path
from typing import TYPE_CHECKING, Any, ClassVar

from pydantic import AliasChoices, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

if TYPE_CHECKING:
    from collections.abc import Generator

_run_id: ContextVar[str | None] = ContextVar("run_id", default=None)
_stage: ContextVar[str | None] = ContextVar("stage", default=None)

_RESERVED_ATTRS = frozenset(
    {
        "args",
        "asctime",
        "created",
        "exc_info",
        "exc_text",
        "filename",
        "funcName",
        "levelname",
        "levelno",
        "lineno",
        "module",
        "msecs",
        "message",
        "msg",
        "name",
        "pathname",
        "process",
        "processName",
        "relativeCreated",
        "stack_info",
        "taskName",
        "thread",
        "threadName",
        "run_id",
        "stage",
    }
)


class LogLevel(StrEnum):
    """Logging level options."""

    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class LogFormat(StrEnum):
    """Log format options."""

    JSON = "json"
    PLAIN = "plain"
    AUTO = "auto"


class LogConfig(BaseSettings):
    """Logging settings from ``GENHOI_LOG_*`` or the plain ``LOG_*`` variables.

    Unknown values fall back to the defaults rather than aborting a run.
    """

    model_config = SettingsConfigDict(extra="ignore", populate_by_name=True)

    level: LogLevel = Field(
        default=LogLevel.INFO, validation_alias=AliasChoices("GENHOI_LOG_LEVEL", "LOG_LEVEL")
    )
    format: LogFormat = Field(
        default=LogFormat.AUTO, validation_alias=AliasChoices("GENHOI_LOG_FORMAT", "LOG_FORMAT")
    )
    no_color: bool = Field(default=False, validation_alias=AliasChoices("NO_COLOR"))

    @field_validator("level", mode="before")
    @classmethod
    def _level(cls, value: Any) -> LogLevel:
        try:
            return LogLevel(str(value).upper())
        except ValueError:
            return LogLevel.INFO

    @field_validator("format", mode="before")
    @classmethod
    def _format(cls, value: Any) -> LogFormat:
        try:
            return LogFormat(str(value).lower())
        except ValueError:
            return LogFormat.AUTO

    @field_validator("no_color", mode="before")
    @classmethod
    def _no_color(cls, value: Any) -> bool:
        return str(value).lower() in ("1", "true", "yes")

    @classmethod
    def from_env(cls) -> LogConfig:
        return cls()

    def should_use_json(self) -> bool:
        if self.format == LogFormat.JSON:
            return True
        if self.format == LogFormat.PLAIN:
            return False
        return not sys.stderr.isatty()


def _json_default(value: Any) -> Any:
    # numpy and torch scalars arrive through extra={...} from the training loop
    item = getattr(value, "item", None)
    if callable(item) and getattr(value, "ndim", 1) == 0:
        return item()
    return str(value)


class JSONFormatter(logging.Formatter):
    """One JSON object per record: timestamp, level, logger, message, run context, extras."""

    def format(self, record: logging.LogRecord) -> str:
        log_entry: dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(record.created, tz=UTC).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "run_id": getattr(record, "run_id", None),
            "stage": getattr(record, "stage", None),
        }

        if record.exc_info:
            log_entry["exception"] = self.formatException(record.exc_info)

        for key, value in record.__dict__.items():
            if key not in _RESERVED_ATTRS:
                log_entry[key] = value

        return json.dumps(log_entry, default=_json_default)


class PlainFormatter(logging.Formatter):
    """Plain text formatter with optional colors."""

    COLORS: ClassVar[dict[str, str]] = {
        "DEBUG": "\033[36m",
        "INFO": "\033[32m",
        "WARNING": "\033[33m",
        "ERROR": "\033[31m",
        "CRITICAL": "\033[35m",
    }
    RESET = "\033[0m"

    def __init__(self, no_color: bool = False) -> None:
        self.no_color = no_color
        fmt = "%(asctime)s %(levelname)-8s [%(name)s] %(message)s"
        super().__init__(fmt=fmt, datefmt="%Y-%m-%d %H:%M:%S")

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)

        run_id = getattr(record, "run_id", None)
        stage = getattr(record, "stage", None)
        context_parts = []
        if run_id:
            context_parts.append(f"run_id={run_id}")
        if stage:
            context_parts.append(f"stage={stage}")
        if context_parts:
            message = f"[{' '.join(context_parts)}] {message}"

        if not self.no_color and sys.stderr.isatty():
            color = self.COLORS.get(record.levelname, "")
            if color:
                message = f"{color}{message}{self.RESET}"

        return message


class QueueLogHandler(logging.Handler):
    """Handler that captures context at emit time and writes from a listener thread."""

    def __init__(self, handler: logging.Handler) -> None:
        super().__init__()
        self.queue_handler = logging.handlers.QueueHandler(queue.Queue(-1))
        self.queue = self.queue_handler.queue
        self.targets: list[logging.Handler] = [handler]
        self.listener: logging.handlers.QueueListener | None = None

    def emit(self, record: logging.LogRecord) -> None:
        record.__dict__["run_id"] = _run_id.get()
        record.__dict__["stage"] = _stage.get()
        self.queue_handler.emit(record)

    def start_listener(self) -> None:
        if self.listener is None:
            self.listener = logging.handlers.QueueListener(
                self.queue, *self.targets, respect_handler_level=True
            )
            self.listener.start()

    def stop_listener(self) -> None:
        if self.listener:
            self.listener.stop()
            self.listener = None

    def add_target(self, handler: logging.Handler) -> None:
        """Attach another output; queued records are flushed to the old set first."""
        running = self.listener is not None
        self.stop_listener()
        self.targets.append(handler)
        if running:
            self.start_listener()

    def remove_target(self, handler: logging.Handler) -> None:
        running = self.listener is not None
        self.stop_listener()
        if handler in self.targets:
            self.targets.remove(handler)
        if running:
            self.start_listener()


_logger: logging.Logger | None = None
_queue_handler: QueueLogHandler | None = None


def setup_logging(config: LogConfig | None = None) -> None:
    """Initialize structured logging for the application.

    Args:
        config: Logging configuration. If None, reads from environment.
    """
    global _logger, _queue_handler

    if _logger is not None:
        return

    if config is None:
        config = LogConfig.from_env()

    _logger = logging.getLogger("genhoi")
    _logger.setLevel(getattr(logging, config.level.value))
    _logger.handlers.clear()

    use_json = config.should_use_json()
    formatter = JSONFormatter() if use_json else PlainFormatter(no_color=config.no_color)

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(formatter)

    _queue_handler = QueueLogHandler(stream_handler)
    _queue_handler.start_listener()

    _logger.addHandler(_queue_handler)
    _logger.propagate = False

    _logger.debug("Logging initialized", extra={"format": "json" if use_json else "plain"})


def shutdown_logging() -> None:
    """Stop the queue listener and detach the handler."""
    global _logger, _queue_handler

    if _queue_handler:
        _queue_handler.stop_listener()
        if _logger and _queue_handler in _logger.handlers:
            _logger.removeHandler(_queue_handler)
        _queue_handler = None

    _logger = None


@contextmanager
def set_run_id(run_id: str | None = None) -> Generator[str, None, None]:
    """Set the run_id context variable for the duration of a command.

    Args:
        run_id: The run ID. If None, generates a short UUID.

    Yields:
        The active run ID.
    """
    if run_id is None:
        run_id = str(uuid.uuid4())[:8]
    token = _run_id.set(run_id)
    try:
        yield run_id
    finally:
        _run_id.reset(token)


@contextmanager
def set_stage(stage: str) -> Generator[None, None, None]:
    """Tag log records with a pipeline stage (generate, train, infer, eval, ...)."""
    token = _stage.set(stage)
    try:
        yield
    finally:
        _stage.reset(token)


@contextmanager
def run_log(path: Path) -> Generator[Path, None, None]:
    """Copy every genhoi record to ``path`` as JSON lines while the block runs.

    The file sits next to ``metrics.ndjson`` so the two can be joined on ``run_id``.
    """
    if _queue_handler is None:
        setup_logging()
    assert _queue_handler is not None
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, mode="a", encoding="utf-8")
    handler.setFormatter(JSONFormatter())
    _queue_handler.add_target(handler)
    try:
        yield path
    finally:
        _queue_handler.remove_target(handler)
        handler.close()


def get_run_id() -> str | None:
    return _run_id.get()


def get_stage() -> str | None:
    return _stage.get()


def get_logger(name: str) -> logging.Logger:
    """Get a logger with the given name, configuring logging on first use.

    Args:
        name: The name of the logger (typically __name__)
    """
    if _logger is None:
        setup_logging()
    return logging.getLogger(name)


__all__ = [
    "setup_logging",
    "get_logger",
    "shutdown_logging",
    "set_run_id",
    "set_stage",
    "run_log",
    "get_run_id",
    "get_stage",
    "LogConfig",
    "LogLevel",
    "LogFormat",
    "JSONFormatter",
    "PlainFormatter",
]
