"""
Logging setup shared by the CLI and the services
File: app/core/logging.py
"""

import logging
import sys
from typing import Optional

from app.core.config import settings


LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"
DATE_FORMAT = "%H:%M:%S"


def setup_logging(level: Optional[str] = None) -> None:
    """Configure the root logger once (console handler on stderr)"""
    root = logging.getLogger()
    level_name = (level or settings.FSAIL_LOG_LEVEL).upper()
    root.setLevel(getattr(logging, level_name, logging.INFO))

    if any(getattr(h, "_fsail", False) for h in root.handlers):
        return

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    handler._fsail = True  # type: ignore[attr-defined]
    root.addHandler(handler)

    # SQLAlchemy engine chatter stays at WARN
    logging.getLogger("sqlalchemy.engine").setLevel(logging.WARNING)
