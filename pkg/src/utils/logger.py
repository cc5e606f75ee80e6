"""Logging configuration."""

import logging
import sys

from src.config import get_settings

logging.basicConfig(
    level=getattr(logging, get_settings().log_level.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=[logging.StreamHandler(sys.stdout)],
)

logger = logging.getLogger("neutron_ts")


def set_verbose(verbose: bool) -> None:
    """Switch the toolkit logger to DEBUG."""
    if verbose:
        logger.setLevel(logging.DEBUG)
