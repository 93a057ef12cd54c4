#!/usr/bin/env python3
"""
Run the inventory fixture service.
Defects are switched on with FIXTURE_DEFECTS (comma separated) or --defects.
"""

import os
import sys

import typer
import uvicorn

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from api.main import create_app  # noqa: E402
from api.models.allotment import FixtureDefects  # noqa: E402
from config.settings import FIXTURE_DB_PATH, FIXTURE_DEFECTS  # noqa: E402


def main(
    db: str = typer.Option(FIXTURE_DB_PATH, "--db"),
    defects: str = typer.Option(FIXTURE_DEFECTS, "--defects"),
    host: str = typer.Option("127.0.0.1", "--host"),
    port: int = typer.Option(8000, "--port"),
):
    app = create_app(db, FixtureDefects.parse(defects))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    typer.run(main)
