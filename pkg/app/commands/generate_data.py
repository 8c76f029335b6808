"""
generate-data: expert demonstrations for the base and incremental tasks
File: app/commands/generate_data.py
"""

import argparse

from app.commands._common import add_config_flag, load_config
from app.services.catalog_service import load_catalog, resolve_schedule, validate_catalog
from app.services.demo_service import DemoService

NAME = "generate-data"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Generate seeded expert demonstrations")
    add_config_flag(parser)
    parser.add_argument("--q", type=int, default=None, help="Demonstrations per incremental task")
    parser.add_argument("--out", default=None, help="Data directory (default: config data_dir)")
    parser.add_argument("--force", action="store_true", help="Overwrite a non-empty data directory")
    parser.set_defaults(handler=handle)
    return parser


def handle(args: argparse.Namespace) -> int:
    config = load_config(args)
    out = args.out or config.data_dir
    catalog = load_catalog(config.catalog)
    validate_catalog(catalog)
    base, sessions = resolve_schedule(catalog, config.schedule)
    incremental = [t for group in sessions for t in group]

    print(f"🧪 Generating demonstrations into {out}")
    manifest = DemoService.generate_dataset(config, base, incremental, catalog, out, force=args.force)
    for task_id, count in DemoService.task_counts(manifest).items():
        tag = manifest.files[task_id].session_tag.value
        print(f"   📄 {task_id:<32} {tag:<12} {count:>4} demos")
    print(f"✅ {len(manifest.files)} task files written")
    return 0
