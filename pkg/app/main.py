"""
Command-line entry point
File: app/main.py

Exit codes: 0 success, 1 runtime failure, 2 usage / config error.
"""

import argparse
import logging
import sys
from typing import List, Optional

from app.commands import COMMANDS
from app.core.config import settings
from app.core.exceptions import EXIT_RUNTIME, FSAILError
from app.core.logging import setup_logging

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsail",
        description=f"{settings.PROJECT_NAME}: few-shot action-incremental learning with task-specific prompts",
    )
    parser.add_argument("--log-level", default=None, help="Override FSAIL_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        return args.handler(args)
    except FSAILError as e:
        print(f"❌ {type(e).__name__}: {e.detail}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("\n👋 Interrupted; rerun the same command to resume.", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
