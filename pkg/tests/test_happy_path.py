import pytest
import requests

from core.happy_path import HappyPath, HappyPathFailure, HappyPathGenerator, alias_for
from core.llm_client import LLMClient, Purpose, ScriptedProvider
from core.oas_model import parse_spec
from core.request_engine import RequestEngine
from core.trace_store import Dependent, Generated, Truncation, resolve_all
from tests.helpers import SPEC_PATH, VALID_BODY, dep, gen, plan_reply, values_reply

INVALID_BODY = {**VALID_BODY, "count": 0}


def _generator(server, entries, **kwargs) -> HappyPathGenerator:
    spec = parse_spec(SPEC_PATH.read_text(), "yaml")
    return HappyPathGenerator(spec, LLMClient(ScriptedProvider(entries)), RequestEngine(timeout_s=10), server.base_url, **kwargs)


@pytest.mark.parametrize("rejections", [0, 1, 3, 4, 6])
def test_retry_bound_per_step(fixture_server, rejections):
    entries = [plan_reply(("create", "createAllotment"))]
    entries += [values_reply(gen("create.request.body", INVALID_BODY))] * rejections
    entries.append(values_reply(gen("create.request.body", VALID_BODY)))

    result = _generator(fixture_server, entries, max_retries_per_step=3).build_happy_path("createAllotment")

    assert fixture_server.requests_to("POST /allotments") == min(rejections, 3) + 1
    if rejections > 3:
        assert isinstance(result, HappyPathFailure)
        assert (result.reason, result.step_alias, result.attempts, result.last_status) == ("StepExhausted", "create", 4, 400)
    else:
        assert isinstance(result, HappyPath)
        assert result.attempts_per_step == [rejections + 1]
        assert result.trace.get("create.response.status") == Generated(201)


def test_zero_retries_allows_a_single_attempt(fixture_server):
    entries = [plan_reply(("create", "createAllotment")), values_reply(gen("create.request.body", INVALID_BODY))]
    result = _generator(fixture_server, entries, max_retries_per_step=0).build_happy_path("createAllotment")
    assert isinstance(result, HappyPathFailure)
    assert result.attempts == 1
    assert fixture_server.requests_to("POST /allotments") == 1


def test_chained_steps_record_dependencies(fixture_server):
    entries = [
        plan_reply(("create", "createAllotment"), ("get", "getAllotment")),
        values_reply(gen("create.request.body", VALID_BODY)),
        values_reply(dep("get.request.path.allotment_id", "create.response.body.id")),
    ]
    result = _generator(fixture_server, entries).build_happy_path("getAllotment")

    assert isinstance(result, HappyPath)
    assert [s.alias for s in result.plan.steps] == ["create", "get"]
    assert result.trace.get("get.request.path.allotment_id") == Dependent("create.response.body.id")
    values = resolve_all(result.trace)
    assert values["get.request.path.allotment_id"] == values["create.response.body.id"] == 1
    assert values["get.response.body.room_type_id"] == "DBL"
    assert [e.status for e in result.exchanges] == [201, 200]
    assert result.exchanges[1].request.url.endswith("/allotments/1")


def test_invalid_assignment_is_retried_without_sending(fixture_server):
    missing_count = {k: v for k, v in VALID_BODY.items() if k != "count"}
    entries = [
        plan_reply(("create", "createAllotment")),
        values_reply(gen("create.request.body", missing_count)),
        values_reply(gen("other.request.body", VALID_BODY)),
        values_reply(gen("create.request.body", VALID_BODY)),
    ]
    result = _generator(fixture_server, entries).build_happy_path("createAllotment")

    assert isinstance(result, HappyPath)
    assert result.attempts_per_step == [3]
    assert fixture_server.requests_to("POST /allotments") == 1


def test_plan_replies_are_validated(fixture_server):
    entries = [
        plan_reply(("ping", "ping")),
        plan_reply(("1st", "createAllotment")),
        plan_reply(("create", "createAllotment")),
        values_reply(gen("create.request.body", VALID_BODY)),
    ]
    generator = _generator(fixture_server, entries)
    result = generator.build_happy_path("createAllotment")

    assert isinstance(result, HappyPath)
    plan_usage = generator.llm.ledger.to_dict()["by_purpose"][Purpose.PLAN.value]
    assert (plan_usage["invocations"], plan_usage["rejected"]) == (3, 2)


def test_plan_failure_after_reprompts(fixture_server):
    entries = [plan_reply(("a", "createAllotment"), ("b", "createAllotment"))] * 3
    result = _generator(fixture_server, entries, max_sequence_len=1).build_happy_path("createAllotment")
    assert isinstance(result, HappyPathFailure)
    assert result.reason == "SequenceTooLong"
    assert fixture_server.requests_to("POST /allotments") == 0


def test_user_sequence_overrides_the_plan(fixture_server):
    entries = [
        plan_reply(("whatever", "getAllotment"), guide="Create first, then read it back."),
        values_reply(gen("createAllotment.request.body", VALID_BODY)),
        values_reply(dep("getAllotment.request.path.allotment_id", "createAllotment.response.body.id")),
    ]
    result = _generator(fixture_server, entries).build_happy_path("getAllotment", override=["createAllotment", "getAllotment"])

    assert isinstance(result, HappyPath)
    assert [(s.alias, s.operation_id) for s in result.plan.steps] == [
        ("createAllotment", "createAllotment"),
        ("getAllotment", "getAllotment"),
    ]
    assert result.plan.usage_guide == "Create first, then read it back."


def test_user_sequence_must_end_with_the_target(fixture_server):
    result = _generator(fixture_server, []).build_happy_path("getAllotment", override=["createAllotment"])
    assert isinstance(result, HappyPathFailure)
    assert result.reason == "PlanInvalid"


def test_alias_for():
    assert alias_for("createAllotment", set()) == "createAllotment"
    assert alias_for("createAllotment", {"createAllotment"}) == "createAllotment_2"
    assert alias_for("GET /items", set()) == "GET__items"
    assert alias_for("1x", set()) == "s_1x"


def test_oversized_list_response_keeps_status_and_records_truncation(fixture_server):
    for _ in range(2):
        requests.post(f"{fixture_server.base_url}/allotments", json=VALID_BODY, timeout=10)
    entries = [plan_reply(("list", "listAllotments")), values_reply()]

    result = _generator(fixture_server, entries, max_pairs=8).build_happy_path("listAllotments")

    assert isinstance(result, HappyPath)
    assert result.trace.get("list.response.status") == Generated(200)
    assert result.trace.get("list.response.body[0].id") is not None
    assert result.truncations == [Truncation("list.response.body", 1, 2)]
