import json

import pytest

from core.errors import ExternalRefNotSupported, MalformedDocument, UnresolvableRef, UnsupportedVersion
from core.oas_model import (
    RECURSIVE_MARKER,
    TRUNCATION_MARKER,
    ConstraintEntry,
    ConstraintKind,
    ParameterLocation,
    constraint_catalog,
    constraint_violated,
    locator_for_key,
    operation_summary,
    parse_spec,
    resolve_refs,
    schema_for_locator,
    to_schema_node,
)
from core.trace_store import ABSENT, parse_key
from tests.helpers import SPEC_PATH


@pytest.fixture
def spec():
    return parse_spec(SPEC_PATH.read_text(), "yaml")


def _document(paths: dict, **extra) -> str:
    return json.dumps({"openapi": "3.1.0", "info": {"title": "t", "version": "1"}, "paths": paths, **extra})


def test_operations_follow_document_order(spec):
    assert spec.title == "Inventory fixture service"
    assert spec.servers == ["http://127.0.0.1:8000"]
    assert [op.id for op in spec.operations] == [
        "ping",
        "listAllotments",
        "createAllotment",
        "getAllotment",
        "updateAllotment",
        "createMaintenanceWindow",
        "crash",
    ]


def test_path_item_parameters_and_all_of(spec):
    get = spec.operation("getAllotment")
    assert get.signature == "GET /allotments/{allotment_id}"
    param = get.parameter(ParameterLocation.PATH, "allotment_id")
    assert param.required and param.schema_node.kind == "integer"

    created = spec.operation("createAllotment").response_schemas["201"]
    assert set(created.properties) == {"room_type_id", "from", "until", "count", "note", "id"}
    assert "id" in created.required_properties
    assert spec.operation("createAllotment").response_schemas["400"] is None


def test_missing_operation_id_falls_back_to_signature():
    spec = parse_spec(_document({"/items": {"get": {"responses": {"200": {"description": "ok"}}}}}))
    assert spec.operations[0].id == "GET /items"


def test_duplicate_operation_ids_stay_unique():
    ok = {"200": {"description": "ok"}}
    spec = parse_spec(_document({
        "/a": {"get": {"operationId": "x", "responses": ok}},
        "/b": {"get": {"operationId": "x", "responses": ok}},
        "/c": {"get": {"operationId": "x_2", "responses": ok}},
    }))
    ids = [op.id for op in spec.operations]
    assert ids == ["x", "x_2", "x_2_2"]
    assert spec.operation("x_2_2").path_template == "/c"


@pytest.mark.parametrize("document, error", [
    ("", MalformedDocument),
    ("[1, 2]", MalformedDocument),
    ("swagger: '2.0'\npaths: {}", UnsupportedVersion),
    ("openapi: 4.0.0\npaths: {}", UnsupportedVersion),
    (_document({"/a": {"get": {"responses": {"200": {"$ref": "other.yaml#/R"}}}}}), ExternalRefNotSupported),
    (_document({"/a": {"get": {"responses": {"200": {"$ref": "#/components/responses/R"}}}}}), UnresolvableRef),
    (_document({"/a/{id}": {"get": {"responses": {}}}}), MalformedDocument),
    (_document({"/a": {"get": {"parameters": [{"name": "x", "in": "body"}], "responses": {}}}}), MalformedDocument),
])
def test_parse_errors(document, error):
    with pytest.raises(error):
        parse_spec(document)


def test_inverted_bounds_are_rejected():
    with pytest.raises(MalformedDocument):
        to_schema_node({"type": "integer", "minimum": 5, "maximum": 1})
    with pytest.raises(MalformedDocument):
        to_schema_node({"type": "string", "minLength": 5, "maxLength": 1})


def test_recursive_refs_are_cut_and_idempotent():
    root = {
        "components": {"schemas": {"Node": {
            "type": "object",
            "properties": {"child": {"$ref": "#/components/schemas/Node"}},
        }}},
        "root": {"$ref": "#/components/schemas/Node"},
    }
    resolved = resolve_refs(root)
    node = resolved["root"]
    depth = 0
    while "properties" in node:
        node = node["properties"]["child"]
        depth += 1
    assert RECURSIVE_MARKER in node
    assert depth == 3
    assert resolve_refs(resolved) == resolved
    assert to_schema_node(node).recursive


def test_exclusive_bounds_of_3_0_documents():
    node = to_schema_node({"type": "number", "minimum": 0, "exclusiveMinimum": True})
    assert node.minimum is None
    assert node.exclusive_minimum == 0


def test_constraint_catalog(spec):
    catalog = constraint_catalog(spec.operation("createAllotment"))
    assert catalog.for_locator("body.room_type_id") == [
        ConstraintEntry(locator="body.room_type_id", kind=ConstraintKind.TYPE, payload="string"),
        ConstraintEntry(locator="body.room_type_id", kind=ConstraintKind.REQUIRED),
    ]
    kinds = {entry.kind for entry in catalog.for_locator("body.count")}
    assert kinds == {ConstraintKind.TYPE, ConstraintKind.RANGE, ConstraintKind.REQUIRED}
    assert ConstraintEntry(locator="body.note", kind=ConstraintKind.LENGTH, payload={"max_length": 200}) in catalog.entries
    assert ConstraintEntry(locator="body.from", kind=ConstraintKind.FORMAT, payload="date") in catalog.entries

    listing = constraint_catalog(spec.operation("listAllotments"))
    assert ConstraintEntry(locator="limit", kind=ConstraintKind.RANGE, payload={"minimum": 1, "maximum": 100}) in listing.entries


@pytest.mark.parametrize("key, locator", [
    ("create.request.body.room_type_id", "body.room_type_id"),
    ("create.request.body.tags[3].name", "body.tags[].name"),
    ("create.request.body", "body"),
    ("get.request.path.allotment_id", "allotment_id"),
    ("list.request.query.filter.kind", "filter.kind"),
])
def test_locator_for_key(key, locator):
    assert locator_for_key(parse_key(key)) == locator


def test_schema_for_locator(spec):
    op = spec.operation("createAllotment")
    assert schema_for_locator(op, "body.count").maximum == 10
    assert schema_for_locator(op, "body.missing") is None
    assert schema_for_locator(spec.operation("getAllotment"), "allotment_id").kind == "integer"


def test_request_body_is_a_body_parameter(spec):
    body = spec.operation("createAllotment").body_parameter
    assert (body.name, body.location, body.required) == ("body", ParameterLocation.BODY, True)
    assert "room_type_id" in body.schema_node.required_properties
    assert spec.operation("ping").body_parameter is None


@pytest.mark.parametrize("entry, value, violated", [
    (ConstraintEntry(locator="x", kind=ConstraintKind.TYPE, payload="string"), 101, True),
    (ConstraintEntry(locator="x", kind=ConstraintKind.TYPE, payload="string"), "DBL", False),
    (ConstraintEntry(locator="x", kind=ConstraintKind.TYPE, payload="integer"), True, True),
    (ConstraintEntry(locator="x", kind=ConstraintKind.FORMAT, payload="date"), "2025-13-40", True),
    (ConstraintEntry(locator="x", kind=ConstraintKind.FORMAT, payload="date"), "2025-03-01", False),
    (ConstraintEntry(locator="x", kind=ConstraintKind.FORMAT, payload="date-time"), "not-a-date", True),
    (ConstraintEntry(locator="x", kind=ConstraintKind.FORMAT, payload="date-time"), "2025-03-01T10:00:00Z", False),
    (ConstraintEntry(locator="x", kind=ConstraintKind.FORMAT, payload="uri"), "not a uri", True),
    (ConstraintEntry(locator="x", kind=ConstraintKind.FORMAT, payload="uri"), "https://example.com/a", False),
    (ConstraintEntry(locator="x", kind=ConstraintKind.TYPE, payload="string"), None, True),
    (ConstraintEntry(locator="x", kind=ConstraintKind.TYPE, payload=["string", "null"]), None, False),
    (ConstraintEntry(locator="x", kind=ConstraintKind.ENUM, payload=["a", "b"]), "c", True),
    (ConstraintEntry(locator="x", kind=ConstraintKind.RANGE, payload={"minimum": 1, "maximum": 10}), 11, True),
    (ConstraintEntry(locator="x", kind=ConstraintKind.RANGE, payload={"minimum": 1, "maximum": 10}), 10, False),
    (ConstraintEntry(locator="x", kind=ConstraintKind.RANGE, payload={"minimum": 1}), "0", False),
    (ConstraintEntry(locator="x", kind=ConstraintKind.LENGTH, payload={"max_length": 3}), "abcd", True),
    (ConstraintEntry(locator="x", kind=ConstraintKind.PATTERN, payload="^[A-Z]+$"), "dbl", True),
    (ConstraintEntry(locator="x", kind=ConstraintKind.REQUIRED), ABSENT, True),
    (ConstraintEntry(locator="x", kind=ConstraintKind.REQUIRED), None, False),
    (ConstraintEntry(locator="x", kind=ConstraintKind.TYPE, payload="string"), ABSENT, False),
])
def test_constraint_violated(entry, value, violated):
    assert constraint_violated(entry, value) is violated


@pytest.mark.parametrize("schema", [
    {"type": "string", "nullable": True},
    {"type": ["string", "null"]},
])
def test_nullable_fields_accept_null(schema):
    spec = parse_spec(_document({"/a": {"post": {
        "requestBody": {"content": {"application/json": {"schema": {"type": "object", "properties": {"note": schema}}}}},
        "responses": {"200": {"description": "ok"}},
    }}}))
    (type_entry,) = [e for e in constraint_catalog(spec.operations[0]).for_locator("body.note") if e.kind == ConstraintKind.TYPE]
    assert type_entry.payload == ["string", "null"]
    assert not constraint_violated(type_entry, None)
    assert constraint_violated(type_entry, 5)


def test_operation_summary_respects_budget(spec):
    op = spec.operation("createAllotment")
    summary = operation_summary(op, 6000)
    assert summary.startswith("POST /allotments  (operation id: createAllotment)")
    assert "room_type_id" in summary
    short = operation_summary(op, 256)
    assert len(short) == 256
    assert short.endswith(TRUNCATION_MARKER)
    with pytest.raises(ValueError):
        operation_summary(op, 10)
