import re
from enum import Enum
from typing import Any, Iterable, Optional

from loguru import logger
from pydantic import BaseModel, Field, field_validator

from config.settings import MAX_FUNCTIONAL_SCENARIOS, MAX_STRUCTURAL_SCENARIOS, SUMMARY_BUDGET
from core.errors import ConstraintNotViolated, NoScenarios, ReplyRejected, UnknownKey
from core.happy_path import HappyPath
from core.llm_client import LLMClient, Purpose, StructuredRequest
from core.oas_model import (
    ApiOperation,
    ConstraintCatalog,
    ConstraintEntry,
    constraint_violated,
    locator_for_key,
    operation_summary,
)
from core.prompts import (
    INVALID_VALUES_SCHEMA,
    SCENARIOS_SCHEMA,
    invalid_values_messages,
    scenarios_messages,
)
from core.trace_store import ABSENT, ExecutionTrace, Generated, parse_key, resolve_all


class CaseKind(str, Enum):
    HAPPY_PATH = "HappyPath"
    STRUCTURAL = "Structural"
    FUNCTIONAL = "Functional"

    @property
    def suffix(self) -> str:
        return {"Structural": "_ST", "Functional": "_FN"}.get(self.value, "")

    @property
    def expected_status_class(self) -> str:
        return "2xx" if self is CaseKind.HAPPY_PATH else "4xx"


class TestScenario(BaseModel):
    __test__ = False

    name: str
    kind: CaseKind
    description: str = ""
    target_keys: list[str]
    expected_status_class: str = "4xx"
    constraint: Optional[ConstraintEntry] = None

    @field_validator("target_keys")
    @classmethod
    def _non_empty(cls, value: list[str]) -> list[str]:
        if not value:
            raise ValueError("A scenario needs at least one target key")
        return value


class InvalidValueSet(BaseModel):
    scenario_name: str
    overrides: dict[str, Any] = Field(default_factory=dict)


def _same_literal(x: Any, y: Any) -> bool:
    return type(x) is type(y) and x == y


def scenario_name(raw: str, kind: CaseKind) -> str:
    name = re.sub(r"[^A-Za-z0-9_]", "_", raw.strip()) or "scenario"
    if not name.endswith(kind.suffix):
        name += kind.suffix
    return name


def substitute(happy_values: dict[str, Any], invalid: InvalidValueSet) -> dict[str, Any]:
    """Copy of the happy values with only the override keys replaced."""
    unknown = [key for key in invalid.overrides if key not in happy_values]
    if unknown:
        raise UnknownKey(f"Override keys not in the happy path: {', '.join(unknown)}")
    values = dict(happy_values)
    values.update(invalid.overrides)
    return values


def apply_overrides(trace: ExecutionTrace, invalid: InvalidValueSet) -> ExecutionTrace:
    """Tagged form of substitute: target keys become Generated invalid literals."""
    unknown = [key for key in invalid.overrides if key not in trace]
    if unknown:
        raise UnknownKey(f"Override keys not in the happy path: {', '.join(unknown)}")
    out = ExecutionTrace()
    for key, value in trace.items():
        out.add(key, Generated(invalid.overrides[key]) if key in invalid.overrides else value)
    return out


def final_request_keys(happy: HappyPath) -> list[str]:
    prefix = f"{happy.plan.final_step.alias}.request."
    return [key for key in happy.trace.keys() if key.startswith(prefix)]


class NegativeGenerator:
    """Structural and functional negative scenarios derived from a happy path."""

    def __init__(
        self,
        llm: LLMClient,
        max_structural: int = MAX_STRUCTURAL_SCENARIOS,
        max_functional: int = MAX_FUNCTIONAL_SCENARIOS,
        guidance: Optional[str] = None,
        summary_budget: int = SUMMARY_BUDGET,
    ):
        self.llm = llm
        self.budgets = {CaseKind.STRUCTURAL: max_structural, CaseKind.FUNCTIONAL: max_functional}
        self.guidance = guidance
        self.summary_budget = summary_budget

    def _accept(
        self,
        proposal: dict,
        kind: CaseKind,
        request_keys: list[str],
        catalog: ConstraintCatalog,
        taken: set[str],
    ) -> Optional[TestScenario]:
        name = scenario_name(proposal["name"], kind)
        if name in taken:
            logger.warning(f"Dropping scenario {name}: duplicate name")
            return None
        targets = list(dict.fromkeys(proposal["target_keys"]))
        missing = [key for key in targets if key not in request_keys]
        if missing:
            logger.warning(f"Dropping scenario {name}: keys not in the final request: {', '.join(missing)}")
            return None

        constraint = None
        if kind == CaseKind.STRUCTURAL:
            cited = proposal.get("constraint") or {}
            constraint = next(
                (e for e in catalog.entries if e.locator == cited.get("locator") and e.kind.value == cited.get("kind")),
                None,
            )
            if constraint is None:
                logger.warning(f"Dropping scenario {name}: it does not cite a known constraint ({cited})")
                return None
            if not any(locator_for_key(parse_key(key)) == constraint.locator for key in targets):
                logger.warning(f"Dropping scenario {name}: no target key matches constraint locator {constraint.locator}")
                return None

        return TestScenario(
            name=name,
            kind=kind,
            description=proposal.get("description", ""),
            target_keys=targets,
            constraint=constraint,
        )

    def generate_scenarios(
        self,
        target_op: ApiOperation,
        happy: HappyPath,
        catalog: ConstraintCatalog,
        kinds: Iterable[CaseKind],
    ) -> list[TestScenario]:
        request_keys = final_request_keys(happy)
        resolved = resolve_all(happy.trace)
        request_pairs = [(key, resolved[key]) for key in request_keys]
        constraints = [
            f"{e.locator}, {e.kind.value}" + (f", {e.payload}" if e.payload is not None else "")
            for e in catalog.entries
        ]

        scenarios: list[TestScenario] = []
        taken: set[str] = set()
        for kind in (CaseKind.STRUCTURAL, CaseKind.FUNCTIONAL):
            if kind not in kinds:
                continue
            budget = self.budgets[kind]
            request = StructuredRequest(
                messages=scenarios_messages(
                    kind=kind.value,
                    summary=operation_summary(target_op, self.summary_budget),
                    request_pairs=request_pairs,
                    constraints=constraints,
                    budget=budget,
                    guidance=self.guidance,
                ),
                output_schema=SCENARIOS_SCHEMA,
                purpose=Purpose.SCENARIOS,
            )
            reply, _ = self.llm.complete_structured(request)
            accepted = 0
            for proposal in reply["scenarios"]:
                if accepted >= budget:
                    logger.info(f"{kind.value} scenario budget of {budget} reached for {target_op.id}")
                    break
                scenario = self._accept(proposal, kind, request_keys, catalog, taken)
                if scenario is not None:
                    scenarios.append(scenario)
                    taken.add(scenario.name)
                    accepted += 1
            logger.info(f"{accepted} {kind.value.lower()} scenario(s) accepted for {target_op.id}")

        if not scenarios:
            raise NoScenarios(f"No valid negative scenarios for {target_op.id}")
        return scenarios

    def generate_invalid_values(self, scenario: TestScenario, happy: HappyPath) -> InvalidValueSet:
        resolved = resolve_all(happy.trace)
        current = [(key, resolved[key]) for key in scenario.target_keys]

        def validate(reply: Any) -> None:
            overrides: dict[str, Any] = {}
            for item in reply["overrides"]:
                if item["key"] in overrides:
                    raise ReplyRejected(f"Key {item['key']} appears twice")
                overrides[item["key"]] = item["value"]
            if set(overrides) != set(scenario.target_keys):
                raise ReplyRejected(f"Overrides must cover exactly these keys: {', '.join(scenario.target_keys)}")
            for key, value in overrides.items():
                if _same_literal(value, resolved[key]):
                    raise ReplyRejected(f"The override for {key} equals the valid value")
            if scenario.constraint is not None:
                cited = [k for k in scenario.target_keys if locator_for_key(parse_key(k)) == scenario.constraint.locator]
                for key in cited:
                    if not constraint_violated(scenario.constraint, overrides[key]):
                        raise ConstraintNotViolated(
                            f"{overrides[key]!r} for {key} still satisfies the {scenario.constraint.kind.value} constraint"
                        )

        constraint_text = None
        if scenario.constraint is not None:
            entry = scenario.constraint
            constraint_text = f"{entry.kind.value} on {entry.locator}" + (f" ({entry.payload})" if entry.payload is not None else "")
        request = StructuredRequest(
            messages=invalid_values_messages(
                name=scenario.name,
                description=scenario.description,
                current=current,
                constraint=constraint_text,
                absent=ABSENT,
            ),
            output_schema=INVALID_VALUES_SCHEMA,
            purpose=Purpose.INVALID_VALUES,
        )
        reply, _ = self.llm.complete_structured(request, validator=validate)
        by_key = {item["key"]: item["value"] for item in reply["overrides"]}
        return InvalidValueSet(
            scenario_name=scenario.name,
            overrides={key: by_key[key] for key in scenario.target_keys},
        )
