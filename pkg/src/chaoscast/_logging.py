"""Package logger shared by all modules."""

import logging
import sys

# Set logger to be used to print progress info; stdout is kept for command results
LOGGER = logging.getLogger("chaoscast")
LOGGER.setLevel(logging.INFO)
if not LOGGER.handlers:
    HANDLER = logging.StreamHandler(sys.stderr)
    FORMATTER = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    HANDLER.setFormatter(FORMATTER)
    LOGGER.addHandler(HANDLER)


def get_logger(name: str) -> logging.Logger:
    """Child logger of the package logger, e.g. ``chaoscast._train``."""
    return LOGGER.getChild(name.rsplit(".", 1)[-1])
