"""Logging setup for the command line entry points.

Library modules only create ``logging.getLogger(__name__)`` loggers; handlers
are installed here from a YAML dictConfig file.
"""

from __future__ import annotations

import logging
import logging.config
from pathlib import Path
from typing import Optional, Union

import yaml

DEFAULT_LOG_CONFIG = Path(__file__).resolve().parent.parent / "logging.yaml"


def configure_logging(
    path: Optional[Union[str, Path]] = None, verbose: bool = False
) -> None:
    """Install handlers from ``path`` (default ``logging.yaml``) or basicConfig."""
    config_path = Path(path) if path is not None else DEFAULT_LOG_CONFIG
    if config_path.is_file():
        with open(config_path) as fh:
            logging.config.dictConfig(yaml.safe_load(fh))
    else:
        if path is not None:
            raise FileNotFoundError(f"logging config not found: {config_path}")
        logging.basicConfig(
            level=logging.INFO,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
    if verbose:
        logging.getLogger("stgpod").setLevel(logging.DEBUG)
