"""Builders for scripted LLM replies and run configurations used across tests."""
import json
from pathlib import Path
from typing import Any, Optional

from config.run_config import RunConfig

SPEC_PATH = Path(__file__).parent / "fixtures" / "inventory_api.yaml"

VALID_BODY = {"room_type_id": "DBL", "from": "2025-03-01", "until": "2025-03-05", "count": 2}


def entry(purpose: str, response: Any, prompt_tokens: int = 10, completion_tokens: int = 5) -> dict:
    return {
        "purpose": purpose,
        "response": response,
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


def plan_reply(*steps: tuple[str, str], guide: str = "Use the values in order.", **usage) -> dict:
    return entry("Plan", {
        "steps": [{"alias": alias, "operation_id": op_id} for alias, op_id in steps],
        "usage_guide": guide,
    }, **usage)


def gen(key: str, value: Any) -> dict:
    return {"key": key, "kind": "GENERATED", "value": value}


def dep(key: str, ref: str) -> dict:
    return {"key": key, "kind": "DEPENDENT", "ref": ref}


def values_reply(*items: dict, **usage) -> dict:
    return entry("Values", {"values": list(items)}, **usage)


def scenario(name: str, targets: list[str], description: str = "", constraint: Optional[tuple[str, str]] = None) -> dict:
    item = {"name": name, "description": description or name, "target_keys": targets}
    if constraint is not None:
        item["constraint"] = {"locator": constraint[0], "kind": constraint[1]}
    return item


def scenarios_reply(*items: dict, **usage) -> dict:
    return entry("Scenarios", {"scenarios": list(items)}, **usage)


def invalid_reply(overrides: dict[str, Any], **usage) -> dict:
    return entry("InvalidValues", {"overrides": [{"key": k, "value": v} for k, v in overrides.items()]}, **usage)


def write_replay(path: Path, entries: list[dict]) -> str:
    path.write_text(json.dumps(entries, indent=2), encoding="utf-8")
    return str(path)


def create_allotment_entries(
    structural: Optional[list[tuple[dict, Any]]] = None,
    functional: Optional[list[tuple[dict, Any]]] = None,
) -> list[dict]:
    """Plan, values, one scenario round per kind and the matching invalid values for createAllotment."""
    structural = structural if structural is not None else [
        (scenario("roomtypeIdWrongType", ["create.request.body.room_type_id"],
                  "integer instead of the string room type", ("body.room_type_id", "Type")), 101),
    ]
    functional = functional if functional is not None else [
        (scenario("untilBeforeFrom", ["create.request.body.until"], "the stay ends before it starts"), "2025-02-20"),
    ]
    entries = [
        plan_reply(("create", "createAllotment"), prompt_tokens=40, completion_tokens=7),
        values_reply(gen("create.request.body", VALID_BODY), prompt_tokens=50, completion_tokens=13),
        scenarios_reply(*[s for s, _ in structural], prompt_tokens=30, completion_tokens=11),
        scenarios_reply(*[s for s, _ in functional], prompt_tokens=30, completion_tokens=9),
    ]
    for item, value in structural + functional:
        entries.append(invalid_reply({item["target_keys"][0]: value}, prompt_tokens=20, completion_tokens=3))
    return entries


def run_config(tmp_path: Path, server, entries: list[dict], **overrides) -> RunConfig:
    values = {
        "spec": str(SPEC_PATH),
        "base_url": server.base_url,
        "operations": ["createAllotment"],
        "init_script": server.reset_command,
        "replay": write_replay(tmp_path / "replay.json", entries),
        "output_dir": str(tmp_path / "workspace"),
    }
    values.update(overrides)
    return RunConfig(**values)
