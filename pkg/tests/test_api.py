import pytest
from fastapi.testclient import TestClient

from api.main import create_app
from api.models.allotment import FixtureDefects
from database.sqlite_client import SQLiteClient
from tests.helpers import VALID_BODY


def _client(tmp_path, defects: str = "") -> TestClient:
    tmp_path.mkdir(parents=True, exist_ok=True)
    return TestClient(create_app(str(tmp_path / "api.db"), FixtureDefects.parse(defects)))


def test_create_and_read_allotment(tmp_path):
    client = _client(tmp_path)
    response = client.post("/allotments", json=VALID_BODY)
    assert response.status_code == 201
    assert response.json() == {**VALID_BODY, "id": 1, "note": None}

    response = client.get("/allotments/1")
    assert response.status_code == 200
    assert response.json()["from"] == "2025-03-01"

    response = client.put("/allotments/1", json={**VALID_BODY, "count": 5})
    assert response.json()["count"] == 5

    client.post("/allotments", json={**VALID_BODY, "room_type_id": "SGL"})
    assert [a["id"] for a in client.get("/allotments", params={"room_type_id": "SGL"}).json()] == [2]
    assert len(client.get("/allotments", params={"limit": 1}).json()) == 1


@pytest.mark.parametrize("body", [
    {**VALID_BODY, "count": 0},
    {**VALID_BODY, "count": "2"},
    {**VALID_BODY, "from": "03/01/2025"},
    {**VALID_BODY, "from": "2025-02-30"},
    {**VALID_BODY, "until": "2025-02-20"},
    {**VALID_BODY, "room_type_id": 101},
    {**VALID_BODY, "room_type_id": ""},
    {**VALID_BODY, "note": "x" * 201},
    {k: v for k, v in VALID_BODY.items() if k != "until"},
])
def test_invalid_allotments_are_rejected(tmp_path, body):
    assert _client(tmp_path).post("/allotments", json=body).status_code == 400


def test_unknown_allotment_and_query_limits(tmp_path):
    client = _client(tmp_path)
    assert client.get("/allotments/42").status_code == 404
    assert client.put("/allotments/42", json=VALID_BODY).status_code == 404
    assert client.get("/allotments", params={"limit": 0}).status_code == 400


def test_fixed_endpoints(tmp_path):
    client = _client(tmp_path)
    assert client.get("/ping").json() == {"status": "ok"}
    window = {"room_type_id": "DBL", "from": "2025-03-01", "until": "2025-03-02"}
    assert client.post("/maintenance-windows", json=window).status_code == 400
    assert client.get("/crash").status_code == 500


def test_seeded_defects(tmp_path):
    inverted = {**VALID_BODY, "until": "2025-02-20"}
    assert _client(tmp_path / "a", "accept_inverted_dates").post("/allotments", json=inverted).status_code == 201

    permissive = _client(tmp_path / "b", "accept_non_string_room_type").post("/allotments", json={**VALID_BODY, "room_type_id": 101})
    assert permissive.status_code == 201
    assert permissive.json()["room_type_id"] == "101"

    crashing = _client(tmp_path / "c", "crash_on_non_string_room_type")
    assert crashing.post("/allotments", json={**VALID_BODY, "room_type_id": None}).status_code == 500
    assert crashing.post("/allotments", json=VALID_BODY).status_code == 201

    with pytest.raises(ValueError):
        FixtureDefects.parse("accept_everything")


def test_stats_count_requests_and_resets(tmp_path):
    client = _client(tmp_path)
    client.post("/allotments", json=VALID_BODY)
    client.post("/allotments", json=VALID_BODY)
    client.get("/allotments/2")

    SQLiteClient(str(tmp_path / "api.db")).reset()
    stats = client.get("/__fixture/stats").json()
    assert stats["requests"] == {"POST /allotments": 2, "GET /allotments/2": 1}
    assert stats["resets"] == 1
    assert client.get("/allotments/1").status_code == 404

    # ids restart after a reset
    assert client.post("/allotments", json=VALID_BODY).json()["id"] == 1
