"""OpenAPI 3.x parsing, reference resolution and constraint catalogs."""
import json
import re
from enum import Enum
from pathlib import Path
from typing import Any, Optional
from urllib.parse import urlparse

import jsonschema
import requests
import yaml
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from config.settings import SPEC_DOWNLOAD_TIMEOUT
from core.errors import (
    ExternalRefNotSupported,
    MalformedDocument,
    UnresolvableRef,
    UnsupportedVersion,
)
from core.trace_store import ABSENT, TraceKey

HTTP_METHODS = ("get", "put", "post", "delete", "options", "head", "patch")
RECURSION_DEPTH = 3
RECURSIVE_MARKER = "x-recursive-ref"
TRUNCATION_MARKER = "\n...[truncated]"
MIN_SUMMARY_BUDGET = 256

_PLACEHOLDER = re.compile(r"\{([^{}]+)\}")


class ParameterLocation(str, Enum):
    BODY = "body"
    PATH = "path"
    QUERY = "query"
    HEADER = "header"
    COOKIE = "cookie"


class ConstraintKind(str, Enum):
    TYPE = "Type"
    FORMAT = "Format"
    ENUM = "Enum"
    RANGE = "Range"
    LENGTH = "Length"
    PATTERN = "Pattern"
    REQUIRED = "Required"


class SchemaNode(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Optional[str] = None
    format: Optional[str] = None
    enum_values: Optional[list[Any]] = None
    minimum: Optional[int | float] = None
    maximum: Optional[int | float] = None
    exclusive_minimum: Optional[int | float] = None
    exclusive_maximum: Optional[int | float] = None
    min_length: Optional[int] = None
    max_length: Optional[int] = None
    pattern: Optional[str] = None
    required_properties: list[str] = Field(default_factory=list)
    properties: dict[str, "SchemaNode"] = Field(default_factory=dict)
    items: Optional["SchemaNode"] = None
    nullable: bool = False
    alternatives: list["SchemaNode"] = Field(default_factory=list)
    recursive: bool = False
    description: Optional[str] = None
    annotations: dict[str, Any] = Field(default_factory=dict)


SchemaNode.model_rebuild()


class ParameterSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    location: ParameterLocation
    required: bool = False
    schema_node: SchemaNode = Field(default_factory=SchemaNode)


class ApiOperation(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    method: str
    path_template: str
    parameters: list[ParameterSpec] = Field(default_factory=list)
    request_body_schema: Optional[SchemaNode] = None
    request_body_required: bool = False
    request_body_media_type: Optional[str] = None
    response_schemas: dict[str, Optional[SchemaNode]] = Field(default_factory=dict)
    description: Optional[str] = None

    @property
    def signature(self) -> str:
        return f"{self.method} {self.path_template}"

    @property
    def body_parameter(self) -> Optional[ParameterSpec]:
        if self.request_body_schema is None:
            return None
        return ParameterSpec(
            name="body",
            location=ParameterLocation.BODY,
            required=self.request_body_required,
            schema_node=self.request_body_schema,
        )

    def parameter(self, location: ParameterLocation, name: str) -> Optional[ParameterSpec]:
        for param in self.parameters:
            if param.location == location and param.name == name:
                return param
        return None


class ApiSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    title: str
    version: str
    servers: list[str] = Field(default_factory=list)
    operations: list[ApiOperation] = Field(default_factory=list)

    def operation(self, operation_id: str) -> Optional[ApiOperation]:
        for op in self.operations:
            if op.id == operation_id:
                return op
        return None


class ConstraintEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    locator: str
    kind: ConstraintKind
    payload: Any = None


class ConstraintCatalog(BaseModel):
    model_config = ConfigDict(frozen=True)

    operation_id: str
    entries: list[ConstraintEntry] = Field(default_factory=list)

    def for_locator(self, locator: str) -> list[ConstraintEntry]:
        return [entry for entry in self.entries if entry.locator == locator]


# --- loading -----------------------------------------------------------------

def load_spec_source(source: str) -> tuple[str, str]:
    """Read an OpenAPI document from a path or http(s) URL.

    Returns the raw text and a format hint (json, yaml or auto).
    """
    parsed = urlparse(source)
    if parsed.scheme in ("http", "https"):
        logger.info(f"Downloading OpenAPI document: {source}")
        try:
            response = requests.get(source, timeout=SPEC_DOWNLOAD_TIMEOUT)
            response.raise_for_status()
        except requests.exceptions.RequestException as e:
            raise MalformedDocument(f"Cannot download OpenAPI document {source}: {e}") from e
        content_type = response.headers.get("content-type", "")
        hint = "json" if "json" in content_type else _hint_from_suffix(parsed.path)
        return response.text, hint

    path = Path(source)
    if not path.exists():
        raise MalformedDocument(f"OpenAPI document not found: {source}")
    return path.read_text(encoding="utf-8"), _hint_from_suffix(path.name)


def _hint_from_suffix(name: str) -> str:
    suffix = Path(name).suffix.lower()
    if suffix == ".json":
        return "json"
    if suffix in (".yaml", ".yml"):
        return "yaml"
    return "auto"


def _load_document(document: str, format_hint: str) -> dict:
    if not document or not document.strip():
        raise MalformedDocument("OpenAPI document is empty")
    try:
        if format_hint == "json":
            data = json.loads(document)
        elif format_hint == "yaml":
            data = yaml.safe_load(document)
        else:
            try:
                data = json.loads(document)
            except json.JSONDecodeError:
                data = yaml.safe_load(document)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise MalformedDocument(f"OpenAPI document is not valid {format_hint}: {e}") from e
    if not isinstance(data, dict):
        raise MalformedDocument("OpenAPI document must be a mapping at the top level")
    return data


# --- reference resolution ----------------------------------------------------

def _lookup_pointer(root: dict, ref: str) -> Any:
    node: Any = root
    for raw in ref[2:].split("/") if ref != "#" else []:
        part = raw.replace("~1", "/").replace("~0", "~")
        if isinstance(node, dict) and part in node:
            node = node[part]
        elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
            node = node[int(part)]
        else:
            raise UnresolvableRef(f"Reference {ref} does not resolve inside the document")
    return node


def resolve_refs(root: dict) -> dict:
    """Inline every internal $ref of a document.

    Recursive references are expanded RECURSION_DEPTH times and then replaced
    by a marker node. Applying the function to its own output is the identity.
    """

    def walk(node: Any, stack: tuple[str, ...]) -> Any:
        if isinstance(node, list):
            return [walk(item, stack) for item in node]
        if not isinstance(node, dict):
            return node
        if "$ref" in node and isinstance(node["$ref"], str):
            ref = node["$ref"]
            if not ref.startswith("#"):
                raise ExternalRefNotSupported(f"External reference not supported: {ref}")
            if stack.count(ref) >= RECURSION_DEPTH:
                return {RECURSIVE_MARKER: ref}
            target = walk(_lookup_pointer(root, ref), stack + (ref,))
            siblings = {k: walk(v, stack) for k, v in node.items() if k != "$ref"}
            if not siblings:
                return target
            if isinstance(target, dict):
                return {**target, **siblings}
            return target
        return {key: walk(value, stack) for key, value in node.items()}

    return walk(root, ())


# --- schema conversion -------------------------------------------------------

def _kind_of_value(value: Any) -> Optional[str]:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "array"
    if isinstance(value, dict):
        return "object"
    return None


def _merge_all_of(raw: dict) -> dict:
    merged = {k: v for k, v in raw.items() if k != "allOf"}
    for part in raw.get("allOf") or []:
        if not isinstance(part, dict):
            continue
        part = _merge_all_of(part) if "allOf" in part else part
        for key, value in part.items():
            if key == "properties":
                merged["properties"] = {**merged.get("properties", {}), **value}
            elif key == "required":
                merged["required"] = list(dict.fromkeys(merged.get("required", []) + list(value)))
            else:
                merged[key] = value
    return merged


def to_schema_node(raw: Any) -> SchemaNode:
    if not isinstance(raw, dict):
        return SchemaNode()
    if RECURSIVE_MARKER in raw:
        return SchemaNode(recursive=True, description=f"recursive reference to {raw[RECURSIVE_MARKER]}")
    if "allOf" in raw:
        raw = _merge_all_of(raw)

    alternatives = [to_schema_node(alt) for alt in (raw.get("oneOf") or raw.get("anyOf") or [])]
    first = alternatives[0] if alternatives else None

    kind = raw.get("type")
    nullable = bool(raw.get("nullable", False))
    if isinstance(kind, list):
        non_null = [k for k in kind if k != "null"]
        nullable = nullable or "null" in kind
        kind = non_null[0] if non_null else "null"
    if kind is None:
        if "properties" in raw or "required" in raw:
            kind = "object"
        elif "items" in raw:
            kind = "array"
        elif raw.get("enum"):
            kind = _kind_of_value(raw["enum"][0])
        elif first is not None:
            kind = first.kind

    minimum, maximum = raw.get("minimum"), raw.get("maximum")
    exclusive_minimum, exclusive_maximum = raw.get("exclusiveMinimum"), raw.get("exclusiveMaximum")
    # 3.0 boolean exclusivity becomes the 3.1 numeric form
    if exclusive_minimum is True:
        exclusive_minimum, minimum = minimum, None
    elif exclusive_minimum is False:
        exclusive_minimum = None
    if exclusive_maximum is True:
        exclusive_maximum, maximum = maximum, None
    elif exclusive_maximum is False:
        exclusive_maximum = None

    lower = minimum if minimum is not None else exclusive_minimum
    upper = maximum if maximum is not None else exclusive_maximum
    if lower is not None and upper is not None and lower > upper:
        raise MalformedDocument(f"Schema bounds are inverted: minimum {lower} > maximum {upper}")
    min_length = raw.get("minLength", raw.get("minItems"))
    max_length = raw.get("maxLength", raw.get("maxItems"))
    if min_length is not None and max_length is not None and min_length > max_length:
        raise MalformedDocument(f"Schema length bounds are inverted: {min_length} > {max_length}")

    properties = raw.get("properties") or {}
    node = SchemaNode(
        kind=kind,
        format=raw.get("format"),
        enum_values=list(raw["enum"]) if raw.get("enum") is not None else None,
        minimum=minimum,
        maximum=maximum,
        exclusive_minimum=exclusive_minimum,
        exclusive_maximum=exclusive_maximum,
        min_length=min_length,
        max_length=max_length,
        pattern=raw.get("pattern"),
        required_properties=list(raw.get("required") or []),
        properties={name: to_schema_node(prop) for name, prop in properties.items()},
        items=to_schema_node(raw["items"]) if isinstance(raw.get("items"), dict) else None,
        nullable=nullable,
        alternatives=alternatives,
        description=raw.get("description"),
        annotations={k: v for k, v in raw.items() if isinstance(k, str) and k.startswith("x-")},
    )
    # value generation follows the first alternative
    if first is not None and not node.properties and node.items is None:
        node = node.model_copy(update={
            "properties": first.properties,
            "required_properties": node.required_properties or first.required_properties,
            "items": first.items,
        })
    return node


# --- document to model -------------------------------------------------------

def _json_media(content: dict) -> tuple[Optional[str], Optional[dict]]:
    if not content:
        return None, None
    for media_type, media in content.items():
        base = media_type.split(";")[0].strip().lower()
        if base == "application/json" or base.endswith("+json"):
            return media_type, (media or {}).get("schema", {})
    media_type = next(iter(content))
    return media_type, None


def _build_parameters(path: str, method: str, path_item: dict, raw_op: dict) -> list[ParameterSpec]:
    merged: dict[tuple[str, str], dict] = {}
    for raw in (path_item.get("parameters") or []) + (raw_op.get("parameters") or []):
        if not isinstance(raw, dict) or "name" not in raw or "in" not in raw:
            raise MalformedDocument(f"Parameter without name/in on {method.upper()} {path}")
        merged[(raw["in"], raw["name"])] = raw

    parameters = []
    for (location, name), raw in merged.items():
        try:
            loc = ParameterLocation(location)
        except ValueError:
            raise MalformedDocument(f"Unknown parameter location '{location}' on {method.upper()} {path}")
        if loc == ParameterLocation.BODY:
            raise MalformedDocument(f"'in: body' parameters are OpenAPI 2.x only ({method.upper()} {path})")
        required = bool(raw.get("required", False))
        if loc == ParameterLocation.PATH and not required:
            logger.warning(f"Path parameter '{name}' on {method.upper()} {path} is not marked required; treating it as required")
            required = True
        schema = raw.get("schema")
        if schema is None and raw.get("content"):
            _, schema = _json_media(raw["content"])
        parameters.append(ParameterSpec(name=name, location=loc, required=required, schema_node=to_schema_node(schema or {})))

    placeholders = _PLACEHOLDER.findall(path)
    path_params = [p.name for p in parameters if p.location == ParameterLocation.PATH]
    for placeholder in placeholders:
        if path_params.count(placeholder) != 1:
            raise MalformedDocument(f"Placeholder {{{placeholder}}} in {path} has no matching path parameter")
    for name in path_params:
        if name not in placeholders:
            raise MalformedDocument(f"Path parameter '{name}' is not a placeholder of {path}")
    return parameters


def _build_operation(path: str, method: str, path_item: dict, raw_op: dict) -> ApiOperation:
    parameters = _build_parameters(path, method, path_item, raw_op)

    body_schema, body_media, body_required = None, None, False
    request_body = raw_op.get("requestBody")
    if isinstance(request_body, dict):
        body_media, raw_schema = _json_media(request_body.get("content") or {})
        body_required = bool(request_body.get("required", False))
        if raw_schema is not None:
            body_schema = to_schema_node(raw_schema)

    responses = {}
    for status, response in (raw_op.get("responses") or {}).items():
        _, raw_schema = _json_media((response or {}).get("content") or {})
        responses[str(status)] = to_schema_node(raw_schema) if raw_schema is not None else None

    description = raw_op.get("summary") or raw_op.get("description")
    return ApiOperation(
        id=raw_op.get("operationId") or f"{method.upper()} {path}",
        method=method.upper(),
        path_template=path,
        parameters=parameters,
        request_body_schema=body_schema,
        request_body_required=body_required,
        request_body_media_type=body_media,
        response_schemas=responses,
        description=description,
    )


def parse_spec(document: str, format_hint: str = "auto") -> ApiSpec:
    raw = _load_document(document, format_hint)

    version = str(raw.get("openapi", ""))
    if "swagger" in raw or not version:
        raise UnsupportedVersion(f"Only OpenAPI 3.0/3.1 documents are supported (found {raw.get('swagger') or 'no version'})")
    if not (version.startswith("3.0") or version.startswith("3.1")):
        raise UnsupportedVersion(f"Only OpenAPI 3.0/3.1 documents are supported (found {version})")

    resolved = resolve_refs(raw)
    info = resolved.get("info") or {}
    paths = resolved.get("paths") or {}
    if not isinstance(paths, dict):
        raise MalformedDocument("'paths' must be a mapping")

    operations: list[ApiOperation] = []
    assigned: set[str] = set()
    for path, path_item in paths.items():
        if not isinstance(path_item, dict):
            raise MalformedDocument(f"Path item {path} must be a mapping")
        for method in HTTP_METHODS:
            raw_op = path_item.get(method)
            if not isinstance(raw_op, dict):
                continue
            op = _build_operation(path, method, path_item, raw_op)
            if op.id in assigned:
                n = 2
                while f"{op.id}_{n}" in assigned:
                    n += 1
                logger.warning(f"Duplicate operation id {op.id}; renamed to {op.id}_{n}")
                op = op.model_copy(update={"id": f"{op.id}_{n}"})
            assigned.add(op.id)
            operations.append(op)

    spec = ApiSpec(
        title=str(info.get("title", "Untitled API")),
        version=str(info.get("version", "")),
        servers=[s.get("url", "") for s in resolved.get("servers") or [] if isinstance(s, dict)],
        operations=operations,
    )
    logger.info(f"Parsed OpenAPI document '{spec.title}' with {len(operations)} operations")
    return spec


# --- constraint catalogs -----------------------------------------------------

def _node_entries(locator: str, node: SchemaNode, required: bool) -> list[ConstraintEntry]:
    entries = []
    if node.alternatives:
        kinds = [alt.kind for alt in node.alternatives if alt.kind]
        if kinds and node.nullable and "null" not in kinds:
            kinds.append("null")
        if kinds:
            entries.append(ConstraintEntry(locator=locator, kind=ConstraintKind.TYPE, payload=kinds))
    elif node.kind:
        payload = [node.kind, "null"] if node.nullable and node.kind != "null" else node.kind
        entries.append(ConstraintEntry(locator=locator, kind=ConstraintKind.TYPE, payload=payload))
    if node.format:
        entries.append(ConstraintEntry(locator=locator, kind=ConstraintKind.FORMAT, payload=node.format))
    if node.enum_values is not None:
        entries.append(ConstraintEntry(locator=locator, kind=ConstraintKind.ENUM, payload=list(node.enum_values)))
    bounds = {
        key: getattr(node, key)
        for key in ("minimum", "maximum", "exclusive_minimum", "exclusive_maximum")
        if getattr(node, key) is not None
    }
    if bounds:
        entries.append(ConstraintEntry(locator=locator, kind=ConstraintKind.RANGE, payload=bounds))
    lengths = {key: getattr(node, key) for key in ("min_length", "max_length") if getattr(node, key) is not None}
    if lengths:
        entries.append(ConstraintEntry(locator=locator, kind=ConstraintKind.LENGTH, payload=lengths))
    if node.pattern:
        entries.append(ConstraintEntry(locator=locator, kind=ConstraintKind.PATTERN, payload=node.pattern))
    if required:
        entries.append(ConstraintEntry(locator=locator, kind=ConstraintKind.REQUIRED))

    if node.recursive:
        return entries
    for name, prop in node.properties.items():
        entries.extend(_node_entries(f"{locator}.{name}", prop, name in node.required_properties))
    if node.items is not None:
        entries.extend(_node_entries(f"{locator}[]", node.items, False))
    return entries


def constraint_catalog(op: ApiOperation) -> ConstraintCatalog:
    entries: list[ConstraintEntry] = []
    for param in op.parameters:
        entries.extend(_node_entries(param.name, param.schema_node, param.required))
    if op.request_body_schema is not None:
        entries.extend(_node_entries("body", op.request_body_schema, op.request_body_required))
    return ConstraintCatalog(operation_id=op.id, entries=entries)


def locator_for_key(key: TraceKey) -> str:
    """Map a request trace key onto the catalog locator of its schema node."""
    if key.location == "body":
        locator = "body"
        for segment in key.segments:
            locator += "[]" if isinstance(segment, int) else f".{segment}"
        return locator
    if not key.segments:
        return key.location
    locator = str(key.segments[0])
    for segment in key.segments[1:]:
        locator += "[]" if isinstance(segment, int) else f".{segment}"
    return locator


def schema_for_locator(op: ApiOperation, locator: str) -> Optional[SchemaNode]:
    tokens = re.findall(r"\[\]|[^.\[\]]+", locator)
    if not tokens:
        return None
    head, rest = tokens[0], tokens[1:]
    if head == "body":
        node = op.request_body_schema
    else:
        node = next((p.schema_node for p in op.parameters if p.name == head), None)
    for token in rest:
        if node is None:
            return None
        node = node.items if token == "[]" else node.properties.get(token)
    return node


def constraint_violated(entry: ConstraintEntry, value: Any) -> bool:
    """True when the literal breaks the single constraint the entry describes."""
    if entry.kind == ConstraintKind.REQUIRED:
        return value == ABSENT
    if value == ABSENT:
        return False

    if entry.kind == ConstraintKind.TYPE:
        kinds = entry.payload if isinstance(entry.payload, list) else [entry.payload]
        schema = {"type": kinds}
    elif entry.kind == ConstraintKind.FORMAT:
        if not isinstance(value, str):
            return True
        schema = {"type": "string", "format": entry.payload}
    elif entry.kind == ConstraintKind.ENUM:
        return value not in entry.payload
    elif entry.kind == ConstraintKind.RANGE:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        names = {"minimum": "minimum", "maximum": "maximum",
                 "exclusive_minimum": "exclusiveMinimum", "exclusive_maximum": "exclusiveMaximum"}
        schema = {names[k]: v for k, v in entry.payload.items()}
    elif entry.kind == ConstraintKind.LENGTH:
        if isinstance(value, str):
            prefix = "Length"
        elif isinstance(value, list):
            prefix = "Items"
        else:
            return False
        schema = {}
        if entry.payload.get("min_length") is not None:
            schema[f"min{prefix}"] = entry.payload["min_length"]
        if entry.payload.get("max_length") is not None:
            schema[f"max{prefix}"] = entry.payload["max_length"]
    elif entry.kind == ConstraintKind.PATTERN:
        if not isinstance(value, str):
            return False
        schema = {"pattern": entry.payload}
    else:
        return False

    validator = jsonschema.Draft202012Validator(schema, format_checker=jsonschema.FormatChecker())
    return not validator.is_valid(value)


# --- prompt context ----------------------------------------------------------

def _describe_node(node: SchemaNode) -> str:
    if node.recursive:
        return "recursive"
    parts = [node.kind or "any"]
    if node.nullable:
        parts.append("nullable")
    if node.format:
        parts.append(f"format={node.format}")
    if node.enum_values is not None:
        parts.append(f"enum={json.dumps(node.enum_values, ensure_ascii=False)}")
    for key in ("minimum", "maximum", "exclusive_minimum", "exclusive_maximum", "min_length", "max_length"):
        value = getattr(node, key)
        if value is not None:
            parts.append(f"{key}={value:g}" if isinstance(value, float) else f"{key}={value}")
    if node.pattern:
        parts.append(f"pattern={node.pattern}")
    if node.alternatives:
        parts.append("one of " + "|".join(alt.kind or "any" for alt in node.alternatives))
    return ", ".join(parts)


def _render_node(node: SchemaNode, indent: int, lines: list[str]) -> None:
    pad = "  " * indent
    for name, prop in node.properties.items():
        flag = " (required)" if name in node.required_properties else ""
        lines.append(f"{pad}{name}{flag}: {_describe_node(prop)}")
        _render_node(prop, indent + 1, lines)
    if node.items is not None:
        lines.append(f"{pad}[items]: {_describe_node(node.items)}")
        _render_node(node.items, indent + 1, lines)


def operation_summary(op: ApiOperation, budget: int) -> str:
    if budget < MIN_SUMMARY_BUDGET:
        raise ValueError(f"Summary budget must be at least {MIN_SUMMARY_BUDGET} characters")

    lines = [f"{op.signature}  (operation id: {op.id})"]
    if op.description:
        lines.append(f"description: {op.description.strip()}")
    if op.parameters:
        lines.append("parameters:")
        for param in op.parameters:
            flag = " (required)" if param.required else ""
            lines.append(f"  - {param.location.value} {param.name}{flag}: {_describe_node(param.schema_node)}")
            _render_node(param.schema_node, 3, lines)
    else:
        lines.append("no parameters")
    if op.request_body_schema is not None:
        flag = "required" if op.request_body_required else "optional"
        lines.append(f"request body ({op.request_body_media_type}, {flag}): {_describe_node(op.request_body_schema)}")
        _render_node(op.request_body_schema, 2, lines)
    elif op.request_body_media_type:
        lines.append(f"request body: {op.request_body_media_type} (unsupported)")
    else:
        lines.append("no request body")
    if op.response_schemas:
        lines.append("responses:")
        for status, node in op.response_schemas.items():
            if node is None:
                lines.append(f"  {status}: no JSON body")
            else:
                lines.append(f"  {status}: {_describe_node(node)}")
                _render_node(node, 2, lines)

    text = "\n".join(lines)
    if len(text) > budget:
        text = text[: budget - len(TRUNCATION_MARKER)] + TRUNCATION_MARKER
    return text
