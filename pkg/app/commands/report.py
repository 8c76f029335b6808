"""
report: comparison table, session curves and similarity files over run directories
File: app/commands/report.py
"""

import argparse

from app.services.catalog_service import load_catalog
from app.services.config_service import ConfigService
from app.services.report_service import ReportService

NAME = "report"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Compare completed runs")
    parser.add_argument("run_dirs", nargs="+", help="Completed run directories")
    parser.add_argument("--out", default="reports", help="Output directory")
    parser.add_argument("--baseline", default="naive", help="Method the improvement column is measured against")
    parser.add_argument("--config", default=None, help="Config whose catalog labels the similarity pairs")
    parser.set_defaults(handler=handle)
    return parser


def handle(args: argparse.Namespace) -> int:
    catalog_path = ConfigService.load(args.config).catalog if args.config else None
    catalog = load_catalog(catalog_path)
    written = ReportService.compare(args.run_dirs, args.out, baseline=args.baseline, catalog=catalog)

    print(written["table"].read_text())
    for name, path in written.items():
        print(f"   📄 {name}: {path}")
    return 0
