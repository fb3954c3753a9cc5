import logging
import sys

from config import settings

_PROJECT_LOGGERS = set()


def get_logger(name: str) -> logging.Logger:
    """Return a project logger writing to stdout; repeated calls reuse the handler."""
    logger = logging.getLogger(name)
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(logging.Formatter(
            "%(asctime)s [%(levelname)s] %(name)s: %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        ))
        logger.setLevel(_resolve_level(settings.LOG_LEVEL))
        logger.addHandler(handler)
        logger.propagate = False
    _PROJECT_LOGGERS.add(name)
    return logger


def set_level(level: str) -> None:
    """Apply a level to every logger handed out by get_logger (used by --verbose)."""
    resolved = _resolve_level(level)
    for name in _PROJECT_LOGGERS:
        logging.getLogger(name).setLevel(resolved)


def _resolve_level(level: str) -> int:
    value = logging.getLevelName(str(level).upper())
    return value if isinstance(value, int) else logging.INFO
