import json
import re
import subprocess
import time
from typing import TYPE_CHECKING, Any, Optional
from urllib.parse import quote, urlencode

import requests
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config.settings import INIT_SCRIPT_TIMEOUT, REQUEST_TIMEOUT, VERIFY_TLS
from core.errors import (
    InvalidHeaderName,
    MissingRequiredValue,
    ScriptNotFound,
    ScriptTimeout,
    TransportError,
    UnsupportedMediaType,
)
from core.oas_model import ApiOperation, ParameterLocation
from core.trace_store import ABSENT, parse_key, unflatten

if TYPE_CHECKING:
    from core.test_builder import TestStep

_TOKEN = re.compile(r"^[!#$%&'*+\-.^_`|~0-9A-Za-z]+$")
_RESIDUAL_PLACEHOLDER = re.compile(r"\{[^{}]*\}")
VARIABLE = re.compile(r"\{\{([A-Za-z0-9_]+)\}\}")


def canonical_json(value: Any) -> str:
    return json.dumps(value, ensure_ascii=False, separators=(",", ":"))


def scalar_text(value: Any) -> str:
    """Text form of a literal inside a URL, header or cookie."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return value
    return canonical_json(value)


def build_url(base_url: str, path: str, query: list[tuple[str, str]]) -> str:
    url = base_url.rstrip("/") + path
    if query:
        url += "?" + urlencode(query, quote_via=quote)
    return url


def is_json_media_type(media_type: Optional[str]) -> bool:
    if not media_type:
        return True
    base = media_type.split(";")[0].strip().lower()
    return base == "application/json" or base.endswith("+json")


class HttpRequestPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: str
    url: str
    headers: list[tuple[str, str]] = Field(default_factory=list)
    cookies: list[tuple[str, str]] = Field(default_factory=list)
    body: Optional[str] = None

    @field_validator("url")
    @classmethod
    def _no_placeholders(cls, value: str) -> str:
        if _RESIDUAL_PLACEHOLDER.search(value):
            raise ValueError(f"URL still contains a placeholder: {value}")
        return value

    @field_validator("headers", "cookies")
    @classmethod
    def _token_names(cls, value: list[tuple[str, str]]) -> list[tuple[str, str]]:
        for name, _ in value:
            if not _TOKEN.match(name):
                raise ValueError(f"Invalid HTTP token: {name!r}")
        return value

    def header_map(self) -> dict[str, str]:
        headers = {name: text for name, text in self.headers}
        if self.cookies:
            headers["Cookie"] = "; ".join(f"{name}={text}" for name, text in self.cookies)
        if self.body is not None and not any(name.lower() == "content-type" for name in headers):
            headers["Content-Type"] = "application/json"
        return headers


class HttpExchange(BaseModel):
    request: HttpRequestPlan
    status: int = Field(ge=100, le=599)
    headers: dict[str, str] = Field(default_factory=dict)
    body: str = ""
    elapsed_ms: float = 0.0

    def json_body(self) -> Any:
        """Parsed JSON body, or the raw text when it is not JSON."""
        if not self.body:
            return None
        try:
            return json.loads(self.body)
        except ValueError:
            return self.body


class ServerErrorSignature(BaseModel):
    """Dedup key for 5xx responses: (method, path template, sorted override keys)."""

    model_config = ConfigDict(frozen=True)

    method: str
    path_template: str
    override_keys: tuple[str, ...] = ()

    def sort_key(self) -> tuple:
        return (self.method, self.path_template, self.override_keys)


class EnvInitScript(BaseModel):
    command: str
    working_directory: Optional[str] = None
    timeout_s: float = Field(default=INIT_SCRIPT_TIMEOUT, gt=0)


class InitResult(BaseModel):
    ok: bool
    exit_code: int
    output: str = ""


def _check_header(name: str) -> str:
    if not _TOKEN.match(name):
        raise InvalidHeaderName(f"Invalid header or cookie name: {name!r}")
    return name


def _grouped(pairs: list[tuple[Any, Any]]) -> dict[str, list[tuple[tuple, Any]]]:
    groups: dict[str, list[tuple[tuple, Any]]] = {}
    for key, literal in pairs:
        name = str(key.segments[0])
        groups.setdefault(name, []).append((key.segments[1:], literal))
    return groups


def _expand(name: str, value: Any) -> list[tuple[str, str]]:
    if isinstance(value, list):
        return [(name, scalar_text(item)) for item in value]
    return [(name, scalar_text(value))]


class RenderedParts(BaseModel):
    path: str
    query: list[tuple[str, str]] = Field(default_factory=list)
    headers: list[tuple[str, str]] = Field(default_factory=list)
    cookies: list[tuple[str, str]] = Field(default_factory=list)
    body: Optional[str] = None


def render_parts(op: ApiOperation, resolved: dict[str, Any]) -> RenderedParts:
    """Request parts for one step from its resolved request keys."""
    by_location: dict[str, list] = {loc.value: [] for loc in ParameterLocation}
    absent: set[tuple[str, str]] = set()
    for text, literal in resolved.items():
        key = parse_key(text)
        if key.direction != "request":
            continue
        if literal == ABSENT:
            absent.add((key.location, str(key.segments[0]) if key.segments else "body"))
            continue
        by_location[key.location].append((key, literal))

    path_values = {name: unflatten(pairs) for name, pairs in _grouped(by_location["path"]).items()}
    path = op.path_template
    for param in op.parameters:
        if param.location != ParameterLocation.PATH:
            continue
        if param.name not in path_values:
            if (param.location.value, param.name) in absent:
                # an omitted path parameter renders as an empty segment
                logger.debug(f"{op.id}: path parameter '{param.name}' omitted, rendering an empty segment")
                path = path.replace(f"{{{param.name}}}", "")
                continue
            raise MissingRequiredValue(f"{op.id}: no value for path parameter '{param.name}'")
        path = path.replace(f"{{{param.name}}}", quote(scalar_text(path_values[param.name]), safe=""))

    for param in op.parameters:
        if param.location in (ParameterLocation.PATH, ParameterLocation.BODY) or not param.required:
            continue
        present = any(str(k.segments[0]) == param.name for k, _ in by_location[param.location.value])
        if not present and (param.location.value, param.name) not in absent:
            raise MissingRequiredValue(f"{op.id}: no value for required {param.location.value} parameter '{param.name}'")

    query: list[tuple[str, str]] = []
    for name, pairs in _grouped(by_location["query"]).items():
        query.extend(_expand(name, unflatten(pairs)))
    headers = [(_check_header(name), scalar_text(unflatten(pairs))) for name, pairs in _grouped(by_location["header"]).items()]
    cookies = [(_check_header(name), scalar_text(unflatten(pairs))) for name, pairs in _grouped(by_location["cookie"]).items()]

    body = None
    if by_location["body"]:
        if not is_json_media_type(op.request_body_media_type):
            raise UnsupportedMediaType(f"{op.id}: request body media type {op.request_body_media_type} is not supported")
        body = canonical_json(unflatten([(key.segments, literal) for key, literal in by_location["body"]]))
    elif op.request_body_required and ("body", "body") not in absent:
        raise MissingRequiredValue(f"{op.id}: the request body is required")

    return RenderedParts(path=path, query=query, headers=headers, cookies=cookies, body=body)


class RequestEngine:
    """Turns resolved values into HTTP requests and runs init scripts."""

    def __init__(self, timeout_s: float = REQUEST_TIMEOUT, verify_tls: bool = VERIFY_TLS):
        self.timeout_s = timeout_s
        self.verify_tls = verify_tls

    def render_request(self, op: ApiOperation, resolved: dict[str, Any], base_url: str) -> HttpRequestPlan:
        parts = render_parts(op, resolved)
        return HttpRequestPlan(
            method=op.method,
            url=build_url(base_url, parts.path, parts.query),
            headers=parts.headers,
            cookies=parts.cookies,
            body=parts.body,
        )

    def render_step(self, step: "TestStep", variables: dict[str, Any], base_url: str) -> HttpRequestPlan:
        """Render a persisted test step, filling {{variable}} placeholders."""

        def fill(text: str, mode: str = "text") -> str:
            def replace(match: re.Match) -> str:
                name = match.group(1)
                if name not in variables:
                    raise MissingRequiredValue(f"Variable '{name}' was not set by an earlier step")
                value = variables[name]
                if mode == "body":
                    # strings sit inside quotes already
                    return canonical_json(value)[1:-1] if isinstance(value, str) else canonical_json(value)
                if mode == "path":
                    return quote(scalar_text(value), safe="")
                return scalar_text(value)
            return VARIABLE.sub(replace, text)

        return HttpRequestPlan(
            method=step.method,
            url=build_url(base_url, fill(step.path, "path"), [(n, fill(v)) for n, v in step.query]),
            headers=[(n, fill(v)) for n, v in step.headers],
            cookies=[(n, fill(v)) for n, v in step.cookies],
            body=fill(step.body, "body") if step.body is not None else None,
        )

    def send(self, plan: HttpRequestPlan) -> HttpExchange:
        started = time.perf_counter()
        try:
            response = requests.request(
                plan.method,
                plan.url,
                headers=plan.header_map(),
                data=plan.body.encode("utf-8") if plan.body is not None else None,
                timeout=self.timeout_s,
                verify=self.verify_tls,
                allow_redirects=False,
            )
        except requests.exceptions.RequestException as e:
            logger.error(f"Transport error for {plan.method} {plan.url}: {str(e)}")
            raise TransportError(f"{plan.method} {plan.url} failed: {e}") from e
        elapsed = (time.perf_counter() - started) * 1000
        logger.info(f"{plan.method} {plan.url} -> {response.status_code}")
        return HttpExchange(
            request=plan,
            status=response.status_code,
            headers=dict(response.headers),
            body=response.text,
            elapsed_ms=elapsed,
        )

    def run_init_script(self, script: EnvInitScript) -> InitResult:
        logger.info(f"Running environment initialization script: {script.command}")
        try:
            completed = subprocess.run(
                script.command,
                shell=True,
                cwd=script.working_directory,
                capture_output=True,
                text=True,
                timeout=script.timeout_s,
            )
        except subprocess.TimeoutExpired as e:
            raise ScriptTimeout(f"Init script exceeded {script.timeout_s}s: {script.command}") from e
        except (FileNotFoundError, NotADirectoryError) as e:
            raise ScriptNotFound(f"Cannot run init script {script.command}: {e}") from e

        output = (completed.stdout or "") + (completed.stderr or "")
        if completed.returncode == 127:
            raise ScriptNotFound(f"Init script command not found: {script.command}")
        if completed.returncode != 0:
            logger.warning(f"Init script exited with {completed.returncode}: {output.strip()[:200]}")
        return InitResult(ok=completed.returncode == 0, exit_code=completed.returncode, output=output)
