"""
run: the full session protocol for one method and seed
File: app/commands/run.py
"""

import argparse

from app.commands._common import add_config_flag, add_run_flags, load_config
from app.services.protocol_service import ProtocolService
from app.services.report_service import ReportService

NAME = "run"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Run base + incremental sessions for one method")
    add_config_flag(parser)
    add_run_flags(parser)
    parser.add_argument("--out", default=None, help="Run directory (default: <output_dir>/<method>_q<q>_seed<seed>)")
    parser.set_defaults(handler=handle)
    return parser


def handle(args: argparse.Namespace) -> int:
    config = load_config(args)
    run_dir = args.out or ProtocolService.default_run_dir(config)
    print(f"🚀 {config.train.method.value} | seed {config.train.seed} | q={config.schedule.shots} → {run_dir}")

    summary = ProtocolService.run_protocol(config, run_dir, force=args.force)

    print(ReportService.render_table([(summary.method, summary.reports, None)]))
    print(f"✅ Session average {100.0 * summary.session_average:.1f}%, "
          f"final {100.0 * summary.final_average:.1f}%, mean forgetting {100.0 * summary.mean_forgetting:.1f}")
    return 0
