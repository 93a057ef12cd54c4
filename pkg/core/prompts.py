"""Prompt templates and reply schemas for the four LLM calls.

Every reply is a single JSON object; the schemas below are checked by the
gateway before any semantic validation runs.
"""
import json
from typing import Any, Iterable, Optional

from core.llm_client import ChatMessage

PLAN_SCHEMA = {
    "type": "object",
    "required": ["steps", "usage_guide"],
    "properties": {
        "steps": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["alias", "operation_id"],
                "properties": {
                    "alias": {"type": "string"},
                    "operation_id": {"type": "string"},
                },
            },
        },
        "usage_guide": {"type": "string"},
    },
}

VALUES_SCHEMA = {
    "type": "object",
    "required": ["values"],
    "properties": {
        "values": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["key", "kind"],
                "properties": {
                    "key": {"type": "string"},
                    "kind": {"enum": ["GENERATED", "DEPENDENT"]},
                    "value": {},
                    "ref": {"type": "string"},
                },
            },
        },
    },
}

SCENARIOS_SCHEMA = {
    "type": "object",
    "required": ["scenarios"],
    "properties": {
        "scenarios": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "description", "target_keys"],
                "properties": {
                    "name": {"type": "string"},
                    "description": {"type": "string"},
                    "target_keys": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                    "constraint": {
                        "type": "object",
                        "required": ["locator", "kind"],
                        "properties": {
                            "locator": {"type": "string"},
                            "kind": {"type": "string"},
                        },
                    },
                },
            },
        },
    },
}

INVALID_VALUES_SCHEMA = {
    "type": "object",
    "required": ["overrides"],
    "properties": {
        "overrides": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["key", "value"],
                "properties": {"key": {"type": "string"}, "value": {}},
            },
        },
    },
}

SYSTEM_PROMPT = (
    "You are an expert REST API tester. You read OpenAPI operation descriptions and "
    "execution traces and answer with exactly one JSON object matching the schema you "
    "are given. Do not add explanations, markdown or text outside the JSON object."
)

PLAN_TEMPLATE = """Plan the shortest sequence of API operations that produces a valid (2xx) request for the operation under test.

Operation under test:
{target_summary}

Available operations:
{catalog}
{guidance}{override}
Rules:
- The last step must be operation id "{target_id}".
- Include an earlier step only when the operation under test needs a value it produces (an identifier, a token, an existing resource).
- Use at most {max_steps} steps. Aliases are unique identifiers made of letters, digits, "_" or "-".
- usage_guide explains in plain words which values flow from which step into which parameter.

Reply schema:
{schema}"""

VALUES_TEMPLATE = """Generate request values for step "{alias}" so that the request succeeds with a 2xx response.

Operation:
{summary}

Usage guide:
{guide}

Execution trace so far (key = value; earlier steps only):
{trace}
{guidance}{feedback}
Rules:
- Keys have the form {alias}.request.<body|path|query|header|cookie>.<name>[.<field>|[i]...].
- Cover every required parameter and every required body property.
- Use kind DEPENDENT with "ref" set to an existing trace key when the value must come from an earlier step; use kind GENERATED with a literal "value" otherwise.
- To reference a response header of an earlier step use <step>.response.header.<Name>.

Reply schema:
{schema}"""

SCENARIOS_TEMPLATE = """Design {kind_name} negative test scenarios for the operation under test. Each scenario changes one or more values of the final request so that a correct service must answer with a 4xx client error.

Operation:
{summary}

Valid request values of the final step:
{request_values}
{catalog}{guidance}
Rules:
- {kind_rule}
- target_keys lists the exact keys from the valid request values that the scenario changes; all other values stay valid.
- Names are unique, use only letters, digits and "_" and end with "{suffix}".
- Propose at most {budget} scenarios.

Reply schema:
{schema}"""

STRUCTURAL_RULE = (
    'Structural scenarios break a constraint stated in the OpenAPI description; set "constraint" '
    "to the violated entry (locator and kind) from the constraint list."
)
FUNCTIONAL_RULE = (
    "Functional scenarios break a business rule that the OpenAPI description does not state "
    "(for example an end date before a start date, or a quantity above what is available)."
)

INVALID_VALUES_TEMPLATE = """Produce invalid values for the negative test scenario "{name}".

Scenario: {description}
{constraint}
Current valid values:
{current}

Rules:
- Return exactly one override per key listed above and no other keys.
- Every override must differ from the current valid value.
- To omit a parameter or property entirely use the value "{absent}".

Reply schema:
{schema}"""


def _schema_text(schema: dict) -> str:
    return json.dumps(schema, indent=2)


def _lines(pairs: Iterable[tuple[str, Any]]) -> str:
    rendered = [f"{key} = {json.dumps(value, ensure_ascii=False)}" for key, value in pairs]
    return "\n".join(rendered) if rendered else "(empty)"


def _section(title: str, text: Optional[str]) -> str:
    if not text or not text.strip():
        return ""
    return f"\n{title}:\n{text.strip()}\n"


def plan_messages(
    target_id: str,
    target_summary: str,
    catalog: list[tuple[str, str]],
    max_steps: int,
    guidance: Optional[str] = None,
    override_steps: Optional[list[str]] = None,
) -> list[ChatMessage]:
    override = ""
    if override_steps:
        override = _section(
            "The user fixed the sequence; use exactly these operation ids in this order",
            ", ".join(override_steps),
        )
    prompt = PLAN_TEMPLATE.format(
        target_summary=target_summary,
        catalog="\n".join(f"- {op_id}: {signature}" for op_id, signature in catalog),
        guidance=_section("User guidance", guidance),
        override=override,
        target_id=target_id,
        max_steps=max_steps,
        schema=_schema_text(PLAN_SCHEMA),
    )
    return [ChatMessage(role="system", content=SYSTEM_PROMPT), ChatMessage(role="user", content=prompt)]


def values_messages(
    alias: str,
    summary: str,
    guide: str,
    trace_pairs: list[tuple[str, Any]],
    guidance: Optional[str] = None,
    prior_error: Optional[tuple[int, str]] = None,
    previous: Optional[list[dict]] = None,
    rejection: Optional[str] = None,
) -> list[ChatMessage]:
    feedback = ""
    if prior_error is not None:
        status, body = prior_error
        feedback += _section(
            f"The previous request was answered with HTTP {status}; response body (verbatim)",
            body or "(empty body)",
        )
    if rejection:
        feedback += _section("The previous values were rejected before sending", rejection)
    if previous is not None and feedback:
        feedback += _section("Previous values", json.dumps(previous, ensure_ascii=False))
    prompt = VALUES_TEMPLATE.format(
        alias=alias,
        summary=summary,
        guide=guide or "(none)",
        trace=_lines(trace_pairs),
        guidance=_section("User guidance", guidance),
        feedback=feedback,
        schema=_schema_text(VALUES_SCHEMA),
    )
    return [ChatMessage(role="system", content=SYSTEM_PROMPT), ChatMessage(role="user", content=prompt)]


def scenarios_messages(
    kind: str,
    summary: str,
    request_pairs: list[tuple[str, Any]],
    constraints: list[str],
    budget: int,
    guidance: Optional[str] = None,
) -> list[ChatMessage]:
    structural = kind == "Structural"
    prompt = SCENARIOS_TEMPLATE.format(
        kind_name=kind.lower(),
        summary=summary,
        request_values=_lines(request_pairs),
        catalog=_section("Constraint list (locator, kind, payload)", "\n".join(constraints)) if structural else "",
        guidance=_section("User guidance", guidance),
        kind_rule=STRUCTURAL_RULE if structural else FUNCTIONAL_RULE,
        suffix="_ST" if structural else "_FN",
        budget=budget,
        schema=_schema_text(SCENARIOS_SCHEMA),
    )
    return [ChatMessage(role="system", content=SYSTEM_PROMPT), ChatMessage(role="user", content=prompt)]


def invalid_values_messages(
    name: str,
    description: str,
    current: list[tuple[str, Any]],
    constraint: Optional[str],
    absent: str,
) -> list[ChatMessage]:
    prompt = INVALID_VALUES_TEMPLATE.format(
        name=name,
        description=description,
        constraint=f"Violated constraint: {constraint}\n" if constraint else "",
        current=_lines(current),
        absent=absent,
        schema=_schema_text(INVALID_VALUES_SCHEMA),
    )
    return [ChatMessage(role="system", content=SYSTEM_PROMPT), ChatMessage(role="user", content=prompt)]
