"""
Flags shared by several subcommands
File: app/commands/_common.py
"""

import argparse
from typing import Optional

from app.schemas.config import ExperimentConfig, Method
from app.services.config_service import ConfigService


def add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="Experiment YAML (default: FSAIL_DEFAULT_CONFIG)")


def add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=[m.value for m in Method], default=None, help="Override train.method")
    parser.add_argument("--seed", type=int, default=None, help="Override train.seed")
    parser.add_argument("--q", type=int, default=None, help="Demonstrations per new task (1 or 5)")
    parser.add_argument("--force", action="store_true", help="Overwrite an existing output directory")


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file plus whichever of --method/--seed/--q were given"""
    config = ConfigService.load(args.config)
    method: Optional[str] = getattr(args, "method", None)
    return ConfigService.with_overrides(
        config,
        method=method,
        seed=getattr(args, "seed", None),
        shots=getattr(args, "q", None),
    )
