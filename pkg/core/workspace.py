"""On-disk workspace: per-operation artifacts plus report.json / report.txt."""
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml
from loguru import logger

from core.errors import ConfigError, WorkspaceError
from core.happy_path import OperationPlan
from core.negative_generator import InvalidValueSet, TestScenario
from core.test_builder import PostmanEmitter, TestCase, load_collection
from core.test_runner import GenerationSummary, RunReport, SuiteOutcome, Verdict
from core.trace_store import ExecutionTrace

REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
PLAN_FILE = "plan.json"
TRACE_FILE = "trace.json"
SCENARIOS_FILE = "scenarios.json"
OUTCOMES_FILE = "outcomes.json"
TRIAGE_LABELS = ("Bug", "Enhancement", "Invalid")
BANNER = "=" * 80


@dataclass
class OperationArtifacts:
    operation_id: str
    plan: OperationPlan
    trace: ExecutionTrace
    scenarios: list[TestScenario]
    invalid_values: dict[str, InvalidValueSet]
    cases: list[TestCase]
    collection: str
    truncations: list[dict] = field(default_factory=list)


@dataclass
class LoadedWorkspace:
    root: Path
    config: dict
    generation: GenerationSummary
    suites: list[tuple[str, list[TestCase]]]
    base_url: str
    directories: dict[str, str] = field(default_factory=dict)


def sanitize_operation_id(operation_id: str) -> str:
    name = re.sub(r"[^A-Za-z0-9_.-]", "_", operation_id).strip("._")
    return name or "operation"


def operation_directories(operation_ids: list[str]) -> dict[str, str]:
    directories: dict[str, str] = {}
    used: set[str] = set()
    for operation_id in operation_ids:
        base = sanitize_operation_id(operation_id)
        name, n = base, 1
        while name in used:
            n += 1
            name = f"{base}_{n}"
        used.add(name)
        directories[operation_id] = name
    return directories


def _dump(data: Any) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def _write(path: Path, text: str, written: list[Path]) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise WorkspaceError(f"Cannot write {path}: {e}") from e
    written.append(path)


def _collection_file(directory: str) -> str:
    return f"{directory}{PostmanEmitter.file_suffix}"


def _report_document(report: RunReport, directories: dict[str, str]) -> dict:
    suites = []
    for suite in report.suites:
        directory = directories[suite.operation_id]
        suites.append({
            "operation_id": suite.operation_id,
            "directory": directory,
            "collection": f"{directory}/{_collection_file(directory)}",
            "outcomes": f"{directory}/{OUTCOMES_FILE}" if report.executed else None,
            "test_cases": suite.test_cases,
        })
    return {
        "tool": "restgen",
        "executed": report.executed,
        "config": report.config,
        "metrics": report.metrics(),
        "server_errors": [s.model_dump(mode="json") for s in report.server_errors],
        "suites": suites,
        "generation": report.generation.model_dump(mode="json"),
        "timestamps": report.timestamps,
    }


def write_report(root: Path, report: RunReport, directories: dict[str, str], triage: Optional[dict[str, str]] = None) -> list[Path]:
    written: list[Path] = []
    if report.executed:
        for suite in report.suites:
            outcomes = [o.model_dump(mode="json") for o in suite.outcomes]
            _write(root / directories[suite.operation_id] / OUTCOMES_FILE, _dump(outcomes), written)
    _write(root / REPORT_JSON, _dump(_report_document(report, directories)), written)
    _write(root / REPORT_TXT, render_text_report(report, triage), written)
    return written


def write_workspace(root: Path, artifacts: list[OperationArtifacts], report: RunReport) -> list[Path]:
    """Write every per-operation artifact and the top-level report files."""
    root = Path(root)
    directories = operation_directories([a.operation_id for a in artifacts])
    written: list[Path] = []
    for item in artifacts:
        directory = root / directories[item.operation_id]
        plan = item.plan.model_dump(mode="json")
        if item.truncations:
            plan["truncations"] = item.truncations
        _write(directory / PLAN_FILE, _dump(plan), written)
        _write(directory / TRACE_FILE, _dump(item.trace.to_json()), written)
        scenarios = []
        for scenario in item.scenarios:
            entry = scenario.model_dump(mode="json")
            invalid = item.invalid_values.get(scenario.name)
            entry["overrides"] = invalid.overrides if invalid is not None else None
            scenarios.append(entry)
        _write(directory / SCENARIOS_FILE, _dump(scenarios), written)
        _write(directory / _collection_file(directories[item.operation_id]), item.collection, written)
    written.extend(write_report(root, report, directories))
    logger.info(f"Wrote {len(written)} file(s) to {root}")
    return written


def _read_report(root: Path) -> dict:
    path = root / REPORT_JSON
    if not path.exists():
        raise WorkspaceError(f"No {REPORT_JSON} in {root}; run 'restgen generate' first")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise WorkspaceError(f"{path} is not valid JSON: {e}") from e


def load_workspace(root: Path) -> LoadedWorkspace:
    """Read a generated workspace back; collections are validated on load."""
    root = Path(root)
    document = _read_report(root)
    try:
        generation = GenerationSummary.model_validate(document["generation"])
        entries = document["suites"]
    except (KeyError, ValueError) as e:
        raise WorkspaceError(f"{root / REPORT_JSON} is incomplete: {e}") from e

    suites: list[tuple[str, list[TestCase]]] = []
    directories: dict[str, str] = {}
    base_url = ""
    for entry in entries:
        path = root / entry["collection"]
        if not path.exists():
            raise WorkspaceError(f"Collection file missing: {path}")
        loaded = load_collection(path.read_text(encoding="utf-8"))
        base_url = base_url or loaded.base_url
        suites.append((entry["operation_id"], loaded.cases))
        directories[entry["operation_id"]] = entry["directory"]
    return LoadedWorkspace(
        root=root,
        config=document.get("config") or {},
        generation=generation,
        suites=suites,
        base_url=base_url,
        directories=directories,
    )


def load_report(root: Path) -> tuple[RunReport, dict[str, str]]:
    """Rebuild the RunReport stored in report.json and the outcome files."""
    root = Path(root)
    document = _read_report(root)
    try:
        suites = []
        directories = {}
        for entry in document["suites"]:
            directories[entry["operation_id"]] = entry["directory"]
            outcomes = []
            if entry.get("outcomes"):
                outcomes = json.loads((root / entry["outcomes"]).read_text(encoding="utf-8"))
            suites.append(SuiteOutcome(operation_id=entry["operation_id"], test_cases=entry["test_cases"], outcomes=outcomes))
        report = RunReport(
            generation=GenerationSummary.model_validate(document["generation"]),
            executed=document.get("executed", True),
            suites=suites,
            server_errors=document.get("server_errors") or [],
            config=document.get("config") or {},
            timestamps=document.get("timestamps") or {},
        )
    except (KeyError, ValueError, OSError) as e:
        raise WorkspaceError(f"Cannot read the report in {root}: {e}") from e
    return report, directories


# --- text rendering ----------------------------------------------------------

def _section(title: str) -> list[str]:
    return ["", BANNER, title, BANNER]


def render_text_report(report: RunReport, triage: Optional[dict[str, str]] = None) -> str:
    lines = [BANNER, "SERVER ERRORS", BANNER]
    if not report.server_errors:
        lines.append("  none")
    for signature in report.server_errors:
        overrides = ", ".join(signature.override_keys) or "-"
        lines.append(f"  !! {signature.method} {signature.path_template}  (overridden: {overrides})")
        for outcome in report.outcomes:
            if outcome.server_error == signature:
                lines.append(f"       test case {outcome.operation_id}/{outcome.name} -> {outcome.final_status or outcome.detail}")
        for failure in report.generation.failures:
            if failure.server_error == signature:
                lines.append(f"       happy path generation for {failure.target_operation_id} -> {failure.last_status}")

    metrics = report.metrics()
    ratio = metrics["tokens_per_test_case"]
    lines += _section("SUMMARY")
    lines.append(f"Operations covered (#OC): {metrics['operations_covered']} / {metrics['operations_total']}")
    lines.append(f"Server errors (#SE):      {metrics['server_errors']}")
    lines.append(f"Test cases (#TC):         {metrics['test_case_count']}")
    lines.append(f"Total tokens:             {metrics['total_tokens']}")
    lines.append(f"Tokens per test case:     {ratio['value'] if ratio else 'n/a'}")
    if report.executed:
        lines.append("Verdicts:                 " + ", ".join(f"{k} {v}" for k, v in metrics["verdicts"].items()))
    else:
        lines.append("Verdicts:                 not executed")

    if report.generation.truncations:
        lines += _section("TRUNCATED RESPONSES")
        for operation_id, items in report.generation.truncations.items():
            for item in items:
                lines.append(f"  {operation_id}: {item['key']} kept {item['kept']} of {item['length']} elements")

    if report.generation.failures:
        lines += _section("UNCOVERED OPERATIONS")
        for failure in report.generation.failures:
            where = f" at step '{failure.step_alias}'" if failure.step_alias else ""
            lines.append(f"  {failure.target_operation_id}: {failure.reason}{where} after {failure.attempts} attempt(s): {failure.detail}")

    lines += _section("TEST CASES")
    for suite in report.suites:
        lines.append(f"  {suite.operation_id}")
        if not report.executed:
            lines.extend(f"    {name}" for name in suite.test_cases)
            continue
        for outcome in suite.outcomes:
            detail = f"  {outcome.detail}" if outcome.detail else ""
            lines.append(f"    [{outcome.verdict.value:<11}] {outcome.name}{detail}")

    if triage is not None:
        lines += _section("TRIAGE")
        lines.append(triage_summary(report, triage))
    return "\n".join(lines) + "\n"


def load_triage(path: str) -> dict[str, str]:
    source = Path(path)
    if not source.exists():
        raise ConfigError(f"Triage file not found: {path}")
    text = source.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if source.suffix.lower() == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot parse triage file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Triage file {path} must map test case names to labels")
    return {str(name): str(label) for name, label in data.items()}


def triage_summary(report: RunReport, labels: dict[str, str]) -> str:
    """Per-operation table of reviewer labels for failed and crashing cases."""
    for name, label in labels.items():
        if label not in TRIAGE_LABELS:
            raise ConfigError(f"Unknown triage label '{label}' for {name}; use one of {', '.join(TRIAGE_LABELS)}")

    columns = list(TRIAGE_LABELS) + ["Passed", "unclassified"]
    width = max([len("operation")] + [len(s.operation_id) for s in report.suites])
    rows = ["  " + "operation".ljust(width) + "".join(f"{c:>14}" for c in columns)]
    unclassified = []
    for suite in report.suites:
        counts = {c: 0 for c in columns}
        for outcome in suite.outcomes:
            if outcome.verdict == Verdict.PASSED:
                counts["Passed"] += 1
                continue
            if outcome.verdict == Verdict.SETUP_FAILED:
                continue
            label = labels.get(f"{suite.operation_id}/{outcome.name}") or labels.get(outcome.name)
            if label is None:
                counts["unclassified"] += 1
                unclassified.append(f"{suite.operation_id}/{outcome.name} ({outcome.verdict.value})")
            else:
                counts[label] += 1
        rows.append("  " + suite.operation_id.ljust(width) + "".join(f"{counts[c]:>14}" for c in columns))
    if unclassified:
        rows.append("")
        rows.append("  unclassified: " + ", ".join(unclassified))
    return "\n".join(rows)
