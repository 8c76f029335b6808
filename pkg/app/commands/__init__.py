"""
CLI subcommands: one module per command, each exposing register() and handle()
"""

from app.commands import ablate, generate_data, report, run

COMMANDS = [generate_data, run, report, ablate]
