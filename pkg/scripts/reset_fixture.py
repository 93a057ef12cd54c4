#!/usr/bin/env python3
"""
Environment initialization script for the fixture service.
Empties the allotment table, restarts ids at 1 and counts the reset.
"""

import os
import sys

import typer

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.settings import FIXTURE_DB_PATH  # noqa: E402
from database.sqlite_client import SQLiteClient  # noqa: E402


def main(db: str = typer.Option(FIXTURE_DB_PATH, "--db", help="SQLite file used by the fixture service")):
    client = SQLiteClient(db)
    resets = client.reset()
    client.close()
    typer.echo(f"reset {db} ({resets})")


if __name__ == "__main__":
    typer.run(main)
