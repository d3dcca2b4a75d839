"""Logging setup for IMEAC runs.

Console records go to stderr; report text owns stdout. The file log keeps the
structured ``extra`` fields each module attaches (case, fault bus, clearing
time, machine ids) as trailing ``key=value`` pairs so one run can be traced
from the log alone.
"""

import contextvars
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

from imeac.utils import config as config_utils

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
LOG_DIR = config_utils.config_dir()
LOG_FILE = LOG_DIR / "imeac.log"
FALLBACK_DIR_NAME = ".imeac_logs"
_ACTIVE_LOG_DIR: Optional[Path] = None
_ACTIVE_LOG_FILE: Optional[Path] = None

# Attributes every LogRecord carries; anything else arrived through ``extra``.
_RECORD_ATTRS = frozenset(
    logging.LogRecord("", 0, "", 0, "", None, None).__dict__
) | {"message", "asctime", "taskName"}

_RUN_CONTEXT: contextvars.ContextVar[Dict[str, Any]] = contextvars.ContextVar(
    "imeac_run_context", default={}
)


def active_log_dir() -> Optional[Path]:
    """Return the directory used for file logging (if enabled)."""

    return _ACTIVE_LOG_DIR


def active_log_file() -> Optional[Path]:
    """Return the file used for file logging (if enabled)."""

    return _ACTIVE_LOG_FILE


def _render(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    if isinstance(value, (list, tuple)):
        return ",".join(_render(v) for v in value)
    return str(value)


def structured_fields(record: logging.LogRecord) -> Dict[str, Any]:
    """Return the ``extra`` and run-context fields attached to ``record``."""

    return {
        key: value
        for key, value in sorted(record.__dict__.items())
        if key not in _RECORD_ATTRS and not key.startswith("_")
    }


class RunContextFilter(logging.Filter):
    """Stamp records with the fields of the innermost ``run_context``."""

    def filter(self, record: logging.LogRecord) -> bool:
        for key, value in _RUN_CONTEXT.get().items():
            if not hasattr(record, key):
                setattr(record, key, value)
        return True


class StructuredFormatter(logging.Formatter):
    """Append structured fields missing from the message as ``key=value``."""

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        message = record.getMessage()
        pairs = [
            f"{key}={_render(value)}"
            for key, value in structured_fields(record).items()
            if f"{key}=" not in message
        ]
        return f"{line} | {' '.join(pairs)}" if pairs else line


@contextmanager
def run_context(**fields: Any) -> Iterator[None]:
    """Attach ``fields`` to every record logged inside the block."""

    given = {k: v for k, v in fields.items() if v is not None}
    merged = {**_RUN_CONTEXT.get(), **given}
    token = _RUN_CONTEXT.set(merged)
    try:
        yield
    finally:
        _RUN_CONTEXT.reset(token)


def _open_file_handler(logger: logging.Logger) -> Optional[logging.FileHandler]:
    global _ACTIVE_LOG_DIR, _ACTIVE_LOG_FILE

    _ACTIVE_LOG_DIR = None
    _ACTIVE_LOG_FILE = None
    try:
        LOG_DIR.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(LOG_FILE, mode="a")
        _ACTIVE_LOG_DIR, _ACTIVE_LOG_FILE = LOG_DIR, LOG_FILE
        return handler
    except OSError as exc:
        fallback_dir = Path.cwd() / FALLBACK_DIR_NAME
        fallback_file = fallback_dir / LOG_FILE.name
        try:
            fallback_dir.mkdir(parents=True, exist_ok=True)
            handler = logging.FileHandler(fallback_file, mode="a")
        except OSError as fallback_exc:
            logger.warning(
                "log_file_disabled primary=%s fallback_dir=%s error=%s",
                str(LOG_FILE),
                str(fallback_dir),
                str(fallback_exc),
            )
            return None
        logger.warning(
            "log_file_fallback primary=%s fallback=%s error=%s",
            str(LOG_FILE),
            str(fallback_file),
            str(exc),
        )
        _ACTIVE_LOG_DIR, _ACTIVE_LOG_FILE = fallback_dir, fallback_file
        return handler


def setup_logging(level=logging.INFO):
    """Log plain messages to stderr and structured lines to the log file."""

    logger = logging.getLogger(__name__)
    context = RunContextFilter()

    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    console.addFilter(context)
    handlers = [console]

    file_handler = _open_file_handler(logger)
    if file_handler is not None:
        file_handler.setFormatter(StructuredFormatter(LOG_FORMAT))
        file_handler.addFilter(context)
        handlers.append(file_handler)

    logging.basicConfig(level=level, handlers=handlers, force=True)

    if file_handler is not None:
        logger.info("logging_ready log_file=%s", str(_ACTIVE_LOG_FILE))
    else:
        logger.info("logging_ready log_file=none")


def get_logger(name: str):
    """Get a logger instance."""
    return logging.getLogger(name)
