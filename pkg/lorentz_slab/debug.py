from __future__ import annotations

import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional


_CONFIGURED = False
_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def _ensure_logging(log_file: Optional[str] = None, level_name: Optional[str] = None) -> None:
    global _CONFIGURED
    if _CONFIGURED:
        return
    level_name = (level_name or os.getenv("LOG_LEVEL", "INFO")).upper()
    level = getattr(logging, level_name, logging.INFO)

    logger = logging.getLogger()
    logger.setLevel(level)

    # Clear any existing handlers to prevent duplicates
    logger.handlers.clear()
    fmt = logging.Formatter(_FORMAT)

    # Console handler goes to stderr so CSV/JSON on stdout stays clean
    ch = logging.StreamHandler()
    ch.setLevel(level)
    ch.setFormatter(fmt)
    logger.addHandler(ch)

    log_path = log_file or os.getenv("LORENTZ_LOG_FILE")
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        fh = RotatingFileHandler(log_path, maxBytes=2_000_000, backupCount=3, encoding="utf-8")
        fh.setLevel(level)
        fh.setFormatter(fmt)
        logger.addHandler(fh)

    _CONFIGURED = True


def configure_logging(log_file: Optional[str] = None, verbose: bool = False) -> None:
    """Configure logging explicitly (CLI entry); later get_logger calls reuse it."""
    global _CONFIGURED
    _CONFIGURED = False
    _ensure_logging(log_file, "DEBUG" if verbose else None)


def get_logger(name: str) -> logging.Logger:
    _ensure_logging()
    return logging.getLogger(name)
