"""
ablate: protocol runs across one ablation grid
File: app/commands/ablate.py
"""

import argparse
from pathlib import Path

from app.commands._common import add_config_flag, add_run_flags, load_config
from app.schemas.config import Sweep
from app.services.ablation_service import AblationService

NAME = "ablate"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Sweep prompts, fusion coefficients, projection or base-task count")
    add_config_flag(parser)
    add_run_flags(parser)
    parser.add_argument("--sweep", required=True, choices=[s.value for s in Sweep])
    parser.add_argument("--out", default=None, help="Sweep directory (default: <output_dir>/sweep_<name>)")
    parser.set_defaults(handler=handle)
    return parser


def handle(args: argparse.Namespace) -> int:
    config = load_config(args)
    out = args.out or str(Path(config.output_dir) / f"sweep_{args.sweep}")
    print(f"🔬 Sweep {args.sweep} ({config.train.method.value}, seed {config.train.seed}) → {out}")

    rows = AblationService.run_sweep(config, args.sweep, out, force=args.force)

    for row in rows:
        print(f"   📊 {row.point:<28} avg {100.0 * row.session_average:5.1f}  final {100.0 * row.final_average:5.1f}")
    print(f"✅ {len(rows)} points written to {out}")
    return 0
