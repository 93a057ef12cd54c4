"""Execution trace: ordered key/value record of every request and response value.

Keys follow `<alias>.<request|response>.<location>[.<segment>...]`; object
fields are `.name` (or `["name"]` when the name holds grammar characters) and
array elements `[i]`. Values are GENERATED literals or DEPENDENT references to
keys inserted earlier.
"""
import copy
import json
import re
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Optional, Union

from config.settings import FLATTEN_MAX_PAIRS
from core.errors import (
    CycleDetected,
    DanglingReference,
    DuplicateKey,
    InvalidTraceKey,
    KeySetMismatch,
    MissingKey,
    PayloadTooLarge,
    TraceError,
    TraceFrozen,
    TraceResolutionError,
    UnflattenConflict,
)

# Reserved literal: "omit this parameter/property" when building a request
ABSENT = "__ABSENT__"

DIRECTIONS = ("request", "response")
REQUEST_LOCATIONS = ("body", "path", "query", "header", "cookie")
RESPONSE_LOCATIONS = ("body", "header", "status")

Segment = Union[str, int]

_ALIAS = re.compile(r"^[A-Za-z_][A-Za-z0-9_-]*$")
_SEGMENT = re.compile(r'\.([^.\[\]"\\]+)|\[(\d+)\]|\[("(?:[^"\\]|\\.)*")\]')
_PLAIN_NAME = re.compile(r'^[^.\[\]"\\]+$')


@dataclass(frozen=True)
class TraceKey:
    alias: str
    direction: str
    location: str
    segments: tuple[Segment, ...] = ()

    def __str__(self) -> str:
        return format_key(self.alias, self.direction, self.location, self.segments)

    def child(self, segment: Segment) -> "TraceKey":
        return TraceKey(self.alias, self.direction, self.location, self.segments + (segment,))


@dataclass(frozen=True)
class Generated:
    literal: Any


@dataclass(frozen=True)
class Dependent:
    ref: str


TraceValue = Union[Generated, Dependent]


def is_valid_alias(alias: str) -> bool:
    return bool(_ALIAS.match(alias or ""))


def format_segments(segments: Iterable[Segment]) -> str:
    out = ""
    for segment in segments:
        if isinstance(segment, int):
            out += f"[{segment}]"
        elif _PLAIN_NAME.match(segment):
            out += f".{segment}"
        else:
            out += f"[{json.dumps(segment, ensure_ascii=False)}]"
    return out


def format_key(alias: str, direction: str, location: str, segments: Iterable[Segment] = ()) -> str:
    return f"{alias}.{direction}.{location}{format_segments(segments)}"


def parse_key(text: str) -> TraceKey:
    if not isinstance(text, str):
        raise InvalidTraceKey(f"Trace key must be text, got {text!r}")
    parts = text.split(".", 2)
    if len(parts) < 3:
        raise InvalidTraceKey(f"Trace key '{text}' needs <alias>.<direction>.<location>")
    alias, direction, rest = parts
    if not is_valid_alias(alias):
        raise InvalidTraceKey(f"Invalid step alias in trace key '{text}'")
    if direction not in DIRECTIONS:
        raise InvalidTraceKey(f"Invalid direction '{direction}' in trace key '{text}'")

    match = re.match(r"^([a-z]+)", rest)
    location = match.group(1) if match else ""
    allowed = REQUEST_LOCATIONS if direction == "request" else RESPONSE_LOCATIONS
    if location not in allowed:
        raise InvalidTraceKey(f"Invalid location '{location}' in trace key '{text}'")

    segments: list[Segment] = []
    remainder = rest[len(location):]
    pos = 0
    while pos < len(remainder):
        seg = _SEGMENT.match(remainder, pos)
        if not seg:
            raise InvalidTraceKey(f"Cannot parse trace key '{text}' at '{remainder[pos:]}'")
        if seg.group(1) is not None:
            segments.append(seg.group(1))
        elif seg.group(2) is not None:
            segments.append(int(seg.group(2)))
        else:
            segments.append(json.loads(seg.group(3)))
        pos = seg.end()
    if location == "status" and segments:
        raise InvalidTraceKey(f"Status keys take no segments: '{text}'")
    if location in ("path", "query", "header", "cookie") and not segments:
        raise InvalidTraceKey(f"Trace key '{text}' must name a parameter")
    return TraceKey(alias, direction, location, tuple(segments))


# --- flattening --------------------------------------------------------------

def _flatten_value(prefix: TraceKey, value: Any, out: list[tuple[str, Any]]) -> None:
    if isinstance(value, dict) and value:
        for name, child in value.items():
            _flatten_value(prefix.child(str(name)), child, out)
    elif isinstance(value, list) and value:
        for index, child in enumerate(value):
            _flatten_value(prefix.child(index), child, out)
    else:
        # scalars, null and empty containers are leaves
        out.append((str(prefix), value))


def flatten_value(key: str, value: Any) -> list[tuple[str, Any]]:
    """Flatten a structured value assigned to a single key into leaf pairs."""
    out: list[tuple[str, Any]] = []
    _flatten_value(parse_key(key), value, out)
    return out


def _step_pairs(step_alias: str, direction: str, payload: dict) -> list[tuple[str, Any]]:
    pairs: list[tuple[str, Any]] = []
    if direction == "response" and payload.get("status") is not None:
        pairs.append((format_key(step_alias, direction, "status"), payload["status"]))

    for root, value in _location_roots(step_alias, direction, payload):
        _flatten_value(root, value, pairs)
    return pairs


def _location_roots(step_alias: str, direction: str, payload: dict) -> list[tuple[TraceKey, Any]]:
    roots: list[tuple[TraceKey, Any]] = []
    locations = REQUEST_LOCATIONS if direction == "request" else ("header", "body")
    for location in locations:
        value = payload.get(location)
        if value is None or value == {} or value == [] or value == "":
            continue
        root = TraceKey(step_alias, direction, location)
        if location == "body":
            roots.append((root, value))
        else:
            roots.extend((root.child(str(name)), child) for name, child in value.items())
    return roots


def _leaf_count(value: Any) -> int:
    if isinstance(value, dict) and value:
        return sum(_leaf_count(child) for child in value.values())
    if isinstance(value, list) and value:
        return sum(_leaf_count(child) for child in value)
    return 1


def _arrays(key: TraceKey, value: Any, out: list[tuple[TraceKey, list]]) -> None:
    if isinstance(value, dict):
        for name, child in value.items():
            _arrays(key.child(str(name)), child, out)
    elif isinstance(value, list):
        out.append((key, value))
        for index, child in enumerate(value):
            _arrays(key.child(index), child, out)


@dataclass(frozen=True)
class Truncation:
    """An array whose tail was dropped to keep a step under the pair cap."""

    key: str
    kept: int
    length: int


def truncate_arrays(
    step_alias: str,
    direction: str,
    payload: Optional[dict],
    max_pairs: int = FLATTEN_MAX_PAIRS,
) -> tuple[dict, list[Truncation]]:
    """Drop tail elements of the longest arrays until the step fits `max_pairs`.

    Every value outside array tails is kept. Returns the trimmed copy of the
    payload and one Truncation per shortened array.
    """
    trimmed = copy.deepcopy(payload or {})
    excess = len(_step_pairs(step_alias, direction, trimmed)) - max_pairs
    original: dict[str, tuple[list, int]] = {}

    while excess > 0:
        arrays: list[tuple[TraceKey, list]] = []
        for root, value in _location_roots(step_alias, direction, trimmed):
            _arrays(root, value, arrays)
        arrays = sorted((item for item in arrays if item[1]), key=lambda item: len(item[1]), reverse=True)
        if not arrays:
            break
        key, longest = arrays[0]
        # shorten to the next-longest array, at least one element
        target = min(len(arrays[1][1]) if len(arrays) > 1 else 0, len(longest) - 1)
        original.setdefault(str(key), (longest, len(longest)))
        while excess > 0 and len(longest) > target:
            excess -= _leaf_count(longest.pop())
            if not longest:
                excess += 1

    attached: list[tuple[TraceKey, list]] = []
    for root, value in _location_roots(step_alias, direction, trimmed):
        _arrays(root, value, attached)
    current = {str(key): array for key, array in attached}
    truncations = []
    for key, (array, length) in original.items():
        if current.get(key) is array and len(array) < length:
            truncations.append(Truncation(key=key, kept=len(array), length=length))
    return trimmed, truncations


def flatten(
    step_alias: str,
    direction: str,
    payload: Optional[dict],
    max_pairs: int = FLATTEN_MAX_PAIRS,
    truncate: bool = False,
) -> list[tuple[str, Any]]:
    """Flatten one step's request or response into (key, literal) pairs.

    `payload` maps locations to values: body/path/query/header/cookie for
    requests; status/body (and optionally header) for responses. With
    `truncate`, array tails are dropped (see `truncate_arrays`) instead of
    raising PayloadTooLarge.
    """
    if not is_valid_alias(step_alias):
        raise InvalidTraceKey(f"Invalid step alias '{step_alias}'")
    if direction not in DIRECTIONS:
        raise InvalidTraceKey(f"Invalid direction '{direction}'")
    payload = payload or {}
    pairs = _step_pairs(step_alias, direction, payload)

    if len(pairs) > max_pairs and truncate:
        trimmed, _ = truncate_arrays(step_alias, direction, payload, max_pairs)
        pairs = _step_pairs(step_alias, direction, trimmed)
    if len(pairs) > max_pairs:
        raise PayloadTooLarge(
            f"Step '{step_alias}' {direction} flattens to {len(pairs)} pairs (cap {max_pairs})",
            len(pairs),
        )
    return pairs


def unflatten(pairs: Iterable[tuple[tuple[Segment, ...], Any]]) -> Any:
    """Rebuild a JSON value from (relative segments, literal) pairs.

    Array elements are compacted in index order, so omitted indices close up.
    """
    root: dict = {}
    marker = object()

    def container_for(segment: Segment) -> dict:
        return {"__kind__": "list" if isinstance(segment, int) else "dict", "items": {}}

    for segments, literal in pairs:
        if not segments:
            if root:
                raise UnflattenConflict("Value assigned both as a whole and in parts")
            root = {"__leaf__": literal}
            continue
        if "__leaf__" in root:
            raise UnflattenConflict("Value assigned both as a whole and in parts")
        node = root.setdefault("__node__", container_for(segments[0]))
        for depth, segment in enumerate(segments):
            expected = "list" if isinstance(segment, int) else "dict"
            if node["__kind__"] != expected:
                raise UnflattenConflict(f"Conflicting container types at {format_segments(segments[:depth + 1])}")
            last = depth == len(segments) - 1
            existing = node["items"].get(segment, marker)
            if last:
                if existing is not marker:
                    raise UnflattenConflict(f"Same location assigned twice: {format_segments(segments)}")
                node["items"][segment] = {"__leaf__": literal}
            else:
                if existing is marker:
                    existing = container_for(segments[depth + 1])
                    node["items"][segment] = existing
                elif "__leaf__" in existing:
                    raise UnflattenConflict(f"Location is both a value and a container: {format_segments(segments[:depth + 1])}")
                node = existing

    def build(node: dict) -> Any:
        if "__leaf__" in node:
            return node["__leaf__"]
        if node["__kind__"] == "list":
            return [build(node["items"][i]) for i in sorted(node["items"])]
        return {name: build(child) for name, child in node["items"].items()}

    if "__leaf__" in root:
        return root["__leaf__"]
    if "__node__" not in root:
        return None
    return build(root["__node__"])


# --- the trace ---------------------------------------------------------------

class ExecutionTrace:
    """Ordered, append-only store of trace keys and their values."""

    def __init__(self, entries: Optional[Iterable[tuple[str, TraceValue]]] = None):
        self._entries: dict[str, TraceValue] = {}
        self._frozen = False
        for key, value in entries or []:
            self.add(key, value)

    def add(self, key: str, value: TraceValue) -> None:
        if self._frozen:
            raise TraceFrozen("The execution trace is frozen")
        parse_key(key)
        if key in self._entries:
            raise DuplicateKey(f"Trace key already present: {key}")
        if isinstance(value, Dependent):
            if value.ref not in self._entries:
                raise DanglingReference(f"{key} references {value.ref}, which is not in the trace yet")
        elif not isinstance(value, Generated):
            raise TraceError(f"Unsupported trace value for {key}: {value!r}")
        self._entries[key] = value

    def extend(self, items: Iterable[tuple[str, TraceValue]]) -> None:
        for key, value in items:
            self.add(key, value)

    def freeze(self) -> "ExecutionTrace":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def copy(self) -> "ExecutionTrace":
        clone = ExecutionTrace()
        clone._entries = dict(self._entries)
        return clone

    def get(self, key: str) -> Optional[TraceValue]:
        return self._entries.get(key)

    def keys(self) -> list[str]:
        return list(self._entries)

    def items(self) -> list[tuple[str, TraceValue]]:
        return list(self._entries.items())

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ExecutionTrace) and self.items() == other.items()

    def to_json(self) -> list[dict]:
        out = []
        for key, value in self._entries.items():
            if isinstance(value, Generated):
                out.append({"key": key, "kind": "GENERATED", "value": value.literal})
            else:
                out.append({"key": key, "kind": "DEPENDENT", "ref": value.ref})
        return out

    @classmethod
    def from_json(cls, data: list[dict]) -> "ExecutionTrace":
        trace = cls()
        for entry in data:
            if entry.get("kind") == "DEPENDENT":
                trace.add(entry["key"], Dependent(entry["ref"]))
            else:
                trace.add(entry["key"], Generated(entry.get("value")))
        return trace


def resolve(trace: ExecutionTrace, key: str) -> Any:
    value = trace.get(key)
    if value is None:
        raise MissingKey(f"Trace key not found: {key}")
    seen = {key}
    while isinstance(value, Dependent):
        ref = value.ref
        if ref in seen:
            raise CycleDetected(f"Reference cycle through {ref}")
        seen.add(ref)
        value = trace.get(ref)
        if value is None:
            raise DanglingReference(f"{key} resolves through {ref}, which is absent")
    return value.literal


def resolve_all(trace: ExecutionTrace) -> dict[str, Any]:
    resolved: dict[str, Any] = {}
    for key in trace:
        try:
            resolved[key] = resolve(trace, key)
        except TraceError as e:
            raise TraceResolutionError(key, e) from e
    return resolved


def diff(a: dict[str, Any], b: dict[str, Any]) -> set[str]:
    if set(a) != set(b):
        raise KeySetMismatch(f"Mappings differ in keys: {sorted(set(a) ^ set(b))}")
    return {key for key in a if not _same_literal(a[key], b[key])}


def _same_literal(x: Any, y: Any) -> bool:
    # bool is an int subclass; True must not equal 1 here
    return type(x) is type(y) and x == y
