"""
GeoFlow: Logging Setup
======================
One stderr handler for the whole package, so CSV/JSON artifacts on disk and
stdout stay free of progress lines.
"""

import logging
import os
import sys

_CONFIGURED = False

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s | %(message)s"


def configure(level=None) -> None:
    """
    Configure the package root logger.

    Args:
        level: Logging level name or number; defaults to GEOFLOW_LOG_LEVEL or INFO
    """
    global _CONFIGURED
    if level is None:
        level = os.environ.get("GEOFLOW_LOG_LEVEL", "INFO")
    root = logging.getLogger("geoflow")
    if not _CONFIGURED:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%H:%M:%S"))
        root.addHandler(handler)
        root.propagate = False
        _CONFIGURED = True
    root.setLevel(level)


def get_logger(name: str) -> logging.Logger:
    """Return a child of the package logger for the given module name."""
    if not _CONFIGURED:
        configure()
    return logging.getLogger(f"geoflow.{name}")
