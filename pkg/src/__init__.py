"""
Metric-Phase Field reconstruction.
Learns an unsigned metric field and a phase field from an unoriented point
cloud and extracts the zero level set of their signed composite.
"""

import logging

__version__ = "1.0.0"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: int = logging.INFO) -> None:
    """
    Install a single stream handler on the package logger.

    Args:
        level: Logging level for the ``src`` logger hierarchy
    """
    logger = logging.getLogger(__name__)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    logger.setLevel(level)
