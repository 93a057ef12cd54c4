from dataclasses import dataclass, field
from typing import Any, Optional, Union

from loguru import logger
from pydantic import BaseModel, Field

from config.settings import FLATTEN_MAX_PAIRS, MAX_RETRIES_PER_STEP, MAX_SEQUENCE_LEN, SUMMARY_BUDGET
from core.errors import (
    LLM_UNAVAILABLE,
    AssignmentInvalid,
    InvalidTraceKey,
    MalformedAfterRetries,
    MissingRequiredValue,
    PayloadTooLarge,
    PlanInvalid,
    ReplyRejected,
    SequenceTooLong,
    ToolError,
    TransportError,
    UnflattenConflict,
    UnknownOperation,
)
from core.llm_client import LLMClient, Purpose, StructuredRequest
from core.oas_model import ApiOperation, ApiSpec, ParameterLocation, operation_summary
from core.prompts import PLAN_SCHEMA, VALUES_SCHEMA, plan_messages, values_messages
from core.request_engine import HttpExchange, RequestEngine, ServerErrorSignature
from core.trace_store import (
    Dependent,
    ExecutionTrace,
    Generated,
    TraceValue,
    Truncation,
    flatten,
    flatten_value,
    is_valid_alias,
    parse_key,
    resolve_all,
    truncate_arrays,
    unflatten,
)


class PlanStep(BaseModel):
    alias: str
    operation_id: str


class OperationPlan(BaseModel):
    target_operation_id: str
    steps: list[PlanStep]
    usage_guide: str = ""

    @property
    def final_step(self) -> PlanStep:
        return self.steps[-1]

    def step(self, alias: str) -> Optional[PlanStep]:
        return next((s for s in self.steps if s.alias == alias), None)


@dataclass
class ValueAssignment:
    step_alias: str
    entries: list[tuple[str, TraceValue]]
    raw: list[dict] = field(default_factory=list)


@dataclass
class HappyPath:
    plan: OperationPlan
    trace: ExecutionTrace
    exchanges: list[HttpExchange]
    attempts_per_step: list[int]
    truncations: list[Truncation] = field(default_factory=list)


class HappyPathFailure(BaseModel):
    target_operation_id: str
    reason: str
    detail: str
    step_alias: Optional[str] = None
    operation_id: Optional[str] = None
    attempts: int = 0
    last_status: Optional[int] = None
    server_error: Optional[ServerErrorSignature] = None
    attempts_per_step: list[int] = Field(default_factory=list)


def alias_for(operation_id: str, taken: set[str]) -> str:
    base = "".join(ch if ch.isalnum() or ch in "_-" else "_" for ch in operation_id).strip("_") or "step"
    if not (base[0].isalpha() or base[0] == "_"):
        base = f"s_{base}"
    alias, n = base, 1
    while alias in taken:
        n += 1
        alias = f"{base}_{n}"
    return alias


def _is_2xx(status: int) -> bool:
    return 200 <= status < 300


class HappyPathGenerator:
    """Builds one validated happy path per operation under test."""

    def __init__(
        self,
        spec: ApiSpec,
        llm: LLMClient,
        engine: RequestEngine,
        base_url: str,
        max_retries_per_step: int = MAX_RETRIES_PER_STEP,
        max_sequence_len: int = MAX_SEQUENCE_LEN,
        guidance: Optional[str] = None,
        summary_budget: int = SUMMARY_BUDGET,
        max_pairs: int = FLATTEN_MAX_PAIRS,
    ):
        self.spec = spec
        self.llm = llm
        self.engine = engine
        self.base_url = base_url
        self.max_retries_per_step = max_retries_per_step
        self.max_sequence_len = max_sequence_len
        self.guidance = guidance
        self.summary_budget = summary_budget
        self.max_pairs = max_pairs

    def _operation(self, operation_id: str) -> ApiOperation:
        op = self.spec.operation(operation_id)
        if op is None:
            raise UnknownOperation(f"Operation '{operation_id}' is not defined in the API description")
        return op

    # --- planning ------------------------------------------------------------

    def _check_steps(self, target: str, steps: list[PlanStep]) -> None:
        if not steps:
            raise PlanInvalid("The plan has no steps")
        if len(steps) > self.max_sequence_len:
            raise SequenceTooLong(f"The plan has {len(steps)} steps; at most {self.max_sequence_len} are allowed")
        if steps[-1].operation_id != target:
            raise PlanInvalid(f"The last step must be '{target}', not '{steps[-1].operation_id}'")
        aliases = set()
        for step in steps:
            if not is_valid_alias(step.alias):
                raise PlanInvalid(f"Step alias '{step.alias}' must match [A-Za-z_][A-Za-z0-9_-]*")
            if step.alias in aliases:
                raise PlanInvalid(f"Step alias '{step.alias}' is used twice")
            aliases.add(step.alias)
            if self.spec.operation(step.operation_id) is None:
                raise PlanInvalid(f"Operation '{step.operation_id}' does not exist")

    def plan_sequence(
        self,
        target: str,
        guidance: Optional[str] = None,
        override: Optional[list[str]] = None,
    ) -> OperationPlan:
        target_op = self._operation(target)
        guidance = guidance if guidance is not None else self.guidance

        fixed: Optional[list[PlanStep]] = None
        if override:
            taken: set[str] = set()
            fixed = []
            for operation_id in override:
                alias = alias_for(operation_id, taken)
                taken.add(alias)
                fixed.append(PlanStep(alias=alias, operation_id=operation_id))
            self._check_steps(target, fixed)

        def validate(reply: Any) -> None:
            if fixed is None:
                self._check_steps(target, [PlanStep(**step) for step in reply["steps"]])

        request = StructuredRequest(
            messages=plan_messages(
                target_id=target,
                target_summary=operation_summary(target_op, self.summary_budget),
                catalog=[(op.id, op.signature) for op in self.spec.operations],
                max_steps=self.max_sequence_len,
                guidance=guidance,
                override_steps=override,
            ),
            output_schema=PLAN_SCHEMA,
            purpose=Purpose.PLAN,
        )
        reply, _ = self.llm.complete_structured(request, validator=validate)
        steps = fixed if fixed is not None else [PlanStep(**step) for step in reply["steps"]]
        plan = OperationPlan(target_operation_id=target, steps=steps, usage_guide=reply.get("usage_guide", ""))
        logger.info(f"Plan for {target}: {' -> '.join(s.operation_id for s in plan.steps)}")
        return plan

    # --- values --------------------------------------------------------------

    def _check_assignment(
        self,
        op: ApiOperation,
        alias: str,
        entries: list[tuple[str, TraceValue]],
        trace: ExecutionTrace,
        exchanges: dict[str, HttpExchange],
    ) -> None:
        seen: set[str] = set()
        path_names = {p.name for p in op.parameters if p.location == ParameterLocation.PATH}
        body_pairs = []
        covered: dict[str, set[str]] = {loc.value: set() for loc in ParameterLocation}

        for key_text, value in entries:
            key = parse_key(key_text)
            if key.alias != alias or key.direction != "request":
                raise AssignmentInvalid(f"Key {key_text} is not a request key of step '{alias}'")
            if key_text in seen:
                raise AssignmentInvalid(f"Key {key_text} is assigned twice")
            seen.add(key_text)
            if key.location == "path" and key.segments[0] not in path_names:
                raise AssignmentInvalid(f"'{key.segments[0]}' is not a path parameter of {op.signature}")
            if key.location == "body":
                if op.request_body_schema is None and op.request_body_media_type is None:
                    raise AssignmentInvalid(f"{op.signature} takes no request body")
                body_pairs.append((key.segments, None))
            if key.segments:
                covered[key.location].add(str(key.segments[0]))
            elif key.location == "body":
                covered["body"].add("")
            if isinstance(value, Dependent) and value.ref not in trace:
                if self._header_value(value.ref, exchanges) is None:
                    raise AssignmentInvalid(f"{key_text} references {value.ref}, which is not in the execution trace")

        for param in op.parameters:
            if param.required and param.name not in covered[param.location.value]:
                raise AssignmentInvalid(f"Required {param.location.value} parameter '{param.name}' has no value")
        if op.request_body_required and not covered["body"]:
            raise AssignmentInvalid("The request body is required")
        if op.request_body_schema is not None and covered["body"] and "" not in covered["body"]:
            for prop in op.request_body_schema.required_properties:
                if prop not in covered["body"]:
                    raise AssignmentInvalid(f"Required body property '{prop}' has no value")
        try:
            unflatten(body_pairs)
        except UnflattenConflict as e:
            raise AssignmentInvalid(f"Body keys conflict: {e}") from e

    @staticmethod
    def _header_value(ref: str, exchanges: dict[str, HttpExchange]) -> Optional[str]:
        try:
            key = parse_key(ref)
        except InvalidTraceKey:
            return None
        if key.direction != "response" or key.location != "header" or len(key.segments) != 1:
            return None
        exchange = exchanges.get(key.alias)
        if exchange is None:
            return None
        wanted = str(key.segments[0]).lower()
        return next((v for n, v in exchange.headers.items() if n.lower() == wanted), None)

    def generate_step_values(
        self,
        op: ApiOperation,
        alias: str,
        guide: str,
        trace: ExecutionTrace,
        prior_error: Optional[tuple[int, str]] = None,
        previous: Optional[list[dict]] = None,
        rejection: Optional[str] = None,
        exchanges: Optional[dict[str, HttpExchange]] = None,
    ) -> ValueAssignment:
        exchanges = exchanges or {}
        resolved = resolve_all(trace)
        request = StructuredRequest(
            messages=values_messages(
                alias=alias,
                summary=operation_summary(op, self.summary_budget),
                guide=guide,
                trace_pairs=list(resolved.items()),
                guidance=self.guidance,
                prior_error=prior_error,
                previous=previous,
                rejection=rejection,
            ),
            output_schema=VALUES_SCHEMA,
            purpose=Purpose.VALUES,
        )
        reply, _ = self.llm.complete_structured(request)

        entries: list[tuple[str, TraceValue]] = []
        for item in reply["values"]:
            key = item["key"]
            try:
                parse_key(key)
                if item["kind"] == "DEPENDENT":
                    if not item.get("ref"):
                        raise AssignmentInvalid(f"DEPENDENT value for {key} has no ref")
                    parse_key(item["ref"])
                    entries.append((key, Dependent(item["ref"])))
                else:
                    if "value" not in item:
                        raise AssignmentInvalid(f"GENERATED value for {key} has no value")
                    entries.extend((k, Generated(v)) for k, v in flatten_value(key, item["value"]))
            except InvalidTraceKey as e:
                raise AssignmentInvalid(str(e)) from e

        self._check_assignment(op, alias, entries, trace, exchanges)
        return ValueAssignment(step_alias=alias, entries=entries, raw=reply["values"])

    # --- execution -----------------------------------------------------------

    def _record_response(self, trace: ExecutionTrace, alias: str, exchange: HttpExchange, truncations: list[Truncation]) -> None:
        payload = {"status": exchange.status, "body": exchange.json_body()}
        try:
            pairs = flatten(alias, "response", payload, max_pairs=self.max_pairs)
        except PayloadTooLarge as e:
            trimmed, cut = truncate_arrays(alias, "response", payload, self.max_pairs)
            for item in cut:
                logger.warning(f"Response of step '{alias}' has {e.pair_count} values; {item.key} keeps {item.kept} of {item.length} elements")
            truncations.extend(cut)
            pairs = flatten(alias, "response", trimmed, max_pairs=self.max_pairs)
        trace.extend((key, Generated(literal)) for key, literal in pairs)

    def build_happy_path(
        self,
        target: str,
        guidance: Optional[str] = None,
        override: Optional[list[str]] = None,
    ) -> Union[HappyPath, HappyPathFailure]:
        try:
            plan = self.plan_sequence(target, guidance=guidance, override=override)
        except (ReplyRejected, MalformedAfterRetries) as e:
            logger.error(f"Planning failed for {target}: {str(e)}")
            return HappyPathFailure(target_operation_id=target, reason=type(e).__name__, detail=str(e))
        except LLM_UNAVAILABLE as e:
            logger.error(f"Planning for {target} stopped, LLM unavailable: {str(e)}")
            return HappyPathFailure(target_operation_id=target, reason="LLMUnavailable", detail=str(e))

        trace = ExecutionTrace()
        exchanges: dict[str, HttpExchange] = {}
        ordered: list[HttpExchange] = []
        attempts_per_step: list[int] = []
        truncations: list[Truncation] = []

        for step in plan.steps:
            op = self._operation(step.operation_id)
            prior_error: Optional[tuple[int, str]] = None
            previous: Optional[list[dict]] = None
            rejection: Optional[str] = None
            done: Optional[tuple[ExecutionTrace, HttpExchange]] = None
            attempts = 0

            def failure(reason: str, detail: str, **extra: Any) -> HappyPathFailure:
                logger.error(f"Happy path for {target} failed at step '{step.alias}': {detail}")
                return HappyPathFailure(
                    target_operation_id=target,
                    reason=reason,
                    detail=detail,
                    step_alias=step.alias,
                    operation_id=op.id,
                    attempts=attempts,
                    attempts_per_step=attempts_per_step + [attempts],
                    **extra,
                )

            while attempts < self.max_retries_per_step + 1:
                attempts += 1
                try:
                    assignment = self.generate_step_values(
                        op, step.alias, plan.usage_guide, trace,
                        prior_error=prior_error, previous=previous, rejection=rejection, exchanges=exchanges,
                    )
                except AssignmentInvalid as e:
                    logger.warning(f"Step '{step.alias}' attempt {attempts}: values rejected: {str(e)}")
                    rejection, prior_error = str(e), None
                    continue
                except MalformedAfterRetries as e:
                    return failure("MalformedAfterRetries", str(e))
                except LLM_UNAVAILABLE as e:
                    return failure("LLMUnavailable", str(e))

                step_trace = trace.copy()
                for key, value in assignment.entries:
                    if isinstance(value, Dependent) and value.ref not in step_trace:
                        step_trace.add(value.ref, Generated(self._header_value(value.ref, exchanges)))
                    step_trace.add(key, value)
                resolved = resolve_all(step_trace)
                prefix = f"{step.alias}.request."
                step_values = {k: v for k, v in resolved.items() if k.startswith(prefix)}

                try:
                    request_plan = self.engine.render_request(op, step_values, self.base_url)
                except MissingRequiredValue as e:
                    rejection, prior_error = str(e), None
                    continue
                except ToolError as e:
                    return failure(type(e).__name__, str(e))
                try:
                    exchange = self.engine.send(request_plan)
                except TransportError as e:
                    return failure("TransportError", str(e))

                if _is_2xx(exchange.status):
                    done = (step_trace, exchange)
                    break
                if exchange.status >= 500:
                    return failure(
                        "ServerErrorDuringGeneration",
                        f"{op.signature} answered {exchange.status}",
                        last_status=exchange.status,
                        server_error=ServerErrorSignature(method=op.method, path_template=op.path_template),
                    )
                logger.warning(f"Step '{step.alias}' attempt {attempts}: {op.signature} answered {exchange.status}")
                prior_error, previous, rejection = (exchange.status, exchange.body), assignment.raw, None

            if done is None:
                status = prior_error[0] if prior_error else None
                return failure(
                    "StepExhausted",
                    f"No 2xx response after {attempts} attempt(s)" + (f"; last status {status}" if status else ""),
                    last_status=status,
                )

            trace, exchange = done
            try:
                self._record_response(trace, step.alias, exchange, truncations)
            except PayloadTooLarge as e:
                return failure("PayloadTooLarge", str(e), last_status=exchange.status)
            exchanges[step.alias] = exchange
            ordered.append(exchange)
            attempts_per_step.append(attempts)
            logger.info(f"Step '{step.alias}' ({op.signature}) succeeded with {exchange.status} after {attempts} attempt(s)")

        resolve_all(trace)
        return HappyPath(
            plan=plan,
            trace=trace.freeze(),
            exchanges=ordered,
            attempts_per_step=attempts_per_step,
            truncations=truncations,
        )
