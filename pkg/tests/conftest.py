import shlex
import socket
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import pytest
import requests
import uvicorn

from api.main import create_app
from api.models.allotment import FixtureDefects

RESET_SCRIPT = Path(__file__).resolve().parent.parent / "scripts" / "reset_fixture.py"


def _free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@dataclass
class FixtureServer:
    base_url: str
    db_path: str
    server: uvicorn.Server
    thread: threading.Thread

    @property
    def reset_command(self) -> str:
        return " ".join(shlex.quote(part) for part in (sys.executable, str(RESET_SCRIPT), "--db", self.db_path))

    def stats(self) -> dict:
        return requests.get(f"{self.base_url}/__fixture/stats", timeout=5).json()

    def requests_to(self, signature: str) -> int:
        return self.stats()["requests"].get(signature, 0)

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)


@pytest.fixture
def start_fixture(tmp_path):
    """Factory that starts the inventory service on a free port, one SQLite file per server."""
    servers: list[FixtureServer] = []

    def start(defects: str = "", name: str = "fixture") -> FixtureServer:
        db_path = str(tmp_path / f"{name}.db")
        app = create_app(db_path, FixtureDefects.parse(defects))
        port = _free_port()
        server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning"))
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.time() + 10
        while not server.started:
            if time.time() > deadline:
                raise RuntimeError("fixture service did not start")
            time.sleep(0.02)
        fixture = FixtureServer(base_url=f"http://127.0.0.1:{port}", db_path=db_path, server=server, thread=thread)
        servers.append(fixture)
        return fixture

    yield start
    for fixture in servers:
        fixture.stop()


@pytest.fixture
def fixture_server(start_fixture):
    return start_fixture()
