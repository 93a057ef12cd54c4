"""Generation and execution phases wired together from a RunConfig."""
import fnmatch
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from loguru import logger

from config.run_config import RunConfig
from core.errors import (
    LLM_UNAVAILABLE,
    ConfigError,
    KeySetMismatch,
    MalformedAfterRetries,
    NoScenarios,
    ReplyRejected,
    ScriptNotFound,
    ScriptTimeout,
    ToolError,
)
from core.happy_path import HappyPath, HappyPathFailure, HappyPathGenerator
from core.llm_client import LLMClient, OpenAICompatProvider, ScriptedProvider
from core.negative_generator import CaseKind, InvalidValueSet, NegativeGenerator, TestScenario, apply_overrides
from core.oas_model import ApiOperation, ApiSpec, constraint_catalog, load_spec_source, parse_spec
from core.request_engine import RequestEngine
from core.test_builder import PostmanEmitter, SuiteMeta, TestCase, build_test_case, emit_collection
from core.test_runner import GenerationSummary, RunReport, TestRunner, generation_report
from core.trace_store import diff, resolve_all
from core.workspace import (
    OperationArtifacts,
    load_workspace,
    operation_directories,
    write_report,
    write_workspace,
)


@dataclass
class GenerationResult:
    spec: ApiSpec
    base_url: str
    artifacts: list[OperationArtifacts]
    generation: GenerationSummary


def happy_case_name(operation_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_]", "_", operation_id) + "_HP"


def select_operations(spec: ApiSpec, patterns: list[str]) -> list[ApiOperation]:
    """Operations whose id or 'METHOD path' matches any pattern (all when none given)."""
    if not patterns:
        return list(spec.operations)
    return [
        op for op in spec.operations
        if any(fnmatch.fnmatchcase(op.id, p) or fnmatch.fnmatchcase(op.signature, p) for p in patterns)
    ]


class Pipeline:
    """Runs the generation phase, the execution phase, or both."""

    def __init__(self, cfg: RunConfig, llm: Optional[LLMClient] = None, engine: Optional[RequestEngine] = None):
        self.cfg = cfg
        self._llm = llm
        self.engine = engine or RequestEngine(timeout_s=cfg.request_timeout, verify_tls=cfg.verify_tls)
        self.emitter = PostmanEmitter()

    @property
    def llm(self) -> LLMClient:
        if self._llm is None:
            if self.cfg.replay:
                provider = ScriptedProvider.from_file(self.cfg.replay)
                logger.info(f"Using scripted LLM replies from {self.cfg.replay}")
            else:
                provider = OpenAICompatProvider(self.cfg.provider)
                logger.info(f"Using LLM {self.cfg.provider.model} at {self.cfg.provider.endpoint}")
            self._llm = LLMClient(provider, self.cfg.provider)
        return self._llm

    def load_spec(self) -> ApiSpec:
        if not self.cfg.spec:
            raise ConfigError("No OpenAPI document given; pass --spec")
        text, hint = load_spec_source(self.cfg.spec)
        return parse_spec(text, hint)

    def base_url_for(self, spec: ApiSpec) -> str:
        base_url = self.cfg.base_url or (spec.servers[0] if spec.servers else None)
        if not base_url or not base_url.startswith(("http://", "https://")):
            raise ConfigError("No usable base URL; pass --base-url or declare an absolute server URL")
        return base_url

    def _run_init(self) -> Optional[str]:
        init = self.cfg.init()
        if init is None:
            return None
        try:
            result = self.engine.run_init_script(init)
        except (ScriptTimeout, ScriptNotFound) as e:
            return str(e)
        if not result.ok:
            return f"init script exited with {result.exit_code}: {result.output.strip()[:500]}"
        return None

    def _negative_cases(
        self,
        spec: ApiSpec,
        op: ApiOperation,
        happy: HappyPath,
        negative: NegativeGenerator,
        dropped: list[dict],
    ) -> tuple[list[TestScenario], dict[str, InvalidValueSet], list[TestCase]]:
        kinds = self.cfg.case_kinds & {CaseKind.STRUCTURAL, CaseKind.FUNCTIONAL}
        if not kinds:
            return [], {}, []
        try:
            scenarios = negative.generate_scenarios(op, happy, constraint_catalog(op), kinds)
        except NoScenarios as e:
            logger.warning(str(e))
            return [], {}, []
        except (MalformedAfterRetries, *LLM_UNAVAILABLE) as e:
            logger.error(f"Scenario generation failed for {op.id}: {str(e)}")
            dropped.append({"operation_id": op.id, "scenario": None, "reason": str(e)})
            return [], {}, []

        happy_values = resolve_all(happy.trace)
        invalid_values: dict[str, InvalidValueSet] = {}
        cases: list[TestCase] = []
        for scenario in scenarios:
            try:
                invalid = negative.generate_invalid_values(scenario, happy)
            except (ReplyRejected, MalformedAfterRetries, *LLM_UNAVAILABLE) as e:
                logger.warning(f"Dropping scenario {scenario.name}: {str(e)}")
                dropped.append({"operation_id": op.id, "scenario": scenario.name, "reason": str(e)})
                continue
            try:
                values = apply_overrides(happy.trace, invalid)
                changed = diff(happy_values, resolve_all(values))
                if changed != set(scenario.target_keys):
                    raise KeySetMismatch(f"substitution changed {sorted(changed)}")
                case = build_test_case(
                    spec, happy.plan, values, scenario.kind, scenario.name,
                    target_keys=scenario.target_keys, description=scenario.description,
                )
            except ToolError as e:
                logger.warning(f"Dropping scenario {scenario.name}: {str(e)}")
                dropped.append({"operation_id": op.id, "scenario": scenario.name, "reason": str(e)})
                continue
            invalid_values[scenario.name] = invalid
            cases.append(case)
        return scenarios, invalid_values, cases

    def generate(self) -> GenerationResult:
        spec = self.load_spec()
        base_url = self.base_url_for(spec)
        targets = select_operations(spec, self.cfg.operations)
        guidance = self.cfg.guidance_text()
        unknown = [t for t in self.cfg.sequences if spec.operation(t) is None]
        if unknown:
            raise ConfigError(f"Custom sequences name unknown target operations: {', '.join(unknown)}")
        logger.info(f"Generating test suites for {len(targets)} of {len(spec.operations)} operation(s)")

        generator = HappyPathGenerator(
            spec, self.llm, self.engine, base_url,
            max_retries_per_step=self.cfg.max_retries_per_step,
            max_sequence_len=self.cfg.max_sequence_len,
            guidance=guidance,
            summary_budget=self.cfg.summary_budget,
        )
        negative = NegativeGenerator(
            self.llm,
            max_structural=self.cfg.max_structural,
            max_functional=self.cfg.max_functional,
            guidance=guidance,
            summary_budget=self.cfg.summary_budget,
        )
        summary = GenerationSummary(operations=[op.id for op in targets])
        artifacts: list[OperationArtifacts] = []

        for op in targets:
            problem = self._run_init()
            summary.happy_path_builds += 1
            if problem is not None:
                logger.error(f"Skipping {op.id}: {problem}")
                summary.failures.append(HappyPathFailure(target_operation_id=op.id, reason="InitScriptFailed", detail=problem))
                continue

            result = generator.build_happy_path(op.id, override=self.cfg.sequences.get(op.id))
            if isinstance(result, HappyPathFailure):
                summary.failures.append(result)
                if result.server_error is not None:
                    summary.server_errors.append(result.server_error)
                continue
            summary.covered.append(op.id)
            truncations = [asdict(t) for t in result.truncations]
            if truncations:
                summary.truncations[op.id] = truncations

            cases: list[TestCase] = []
            if CaseKind.HAPPY_PATH in self.cfg.case_kinds:
                cases.append(build_test_case(spec, result.plan, result.trace, CaseKind.HAPPY_PATH, happy_case_name(op.id)))
            scenarios, invalid_values, negatives = self._negative_cases(spec, op, result, negative, summary.dropped)
            cases.extend(negatives)
            if not cases:
                logger.warning(f"No test cases for {op.id}; nothing to write")
                continue

            collection = emit_collection(cases, SuiteMeta(name=op.id, base_url=base_url), self.emitter)
            artifacts.append(OperationArtifacts(
                operation_id=op.id,
                plan=result.plan,
                trace=result.trace,
                scenarios=scenarios,
                invalid_values=invalid_values,
                cases=cases,
                collection=collection,
                truncations=truncations,
            ))
            logger.info(f"{op.id}: {len(cases)} test case(s)")

        summary.ledger = self.llm.ledger.to_dict()
        return GenerationResult(spec=spec, base_url=base_url, artifacts=artifacts, generation=summary)

    def cmd_generate(self) -> RunReport:
        result = self.generate()
        suites = [(a.operation_id, a.cases) for a in result.artifacts]
        report = generation_report(suites, result.generation, self.cfg.echo())
        write_workspace(Path(self.cfg.output_dir), result.artifacts, report)
        return report

    def cmd_run(self, workspace: Optional[str] = None) -> RunReport:
        """Re-execute the suites stored on disk; no LLM calls."""
        root = Path(workspace or self.cfg.output_dir)
        loaded = load_workspace(root)
        base_url = self.cfg.base_url or loaded.base_url
        if not base_url:
            raise ConfigError("No base URL stored in the workspace; pass --base-url")
        runner = TestRunner(self.engine, base_url, self.cfg.init())
        config = {**loaded.config, **{k: v for k, v in self.cfg.echo().items() if k in ("base_url", "init_script", "verify_tls", "request_timeout")}}
        config["base_url"] = base_url
        report = runner.run_all(loaded.suites, loaded.generation, config)
        directories = loaded.directories or operation_directories([op for op, _ in loaded.suites])
        write_report(root, report, directories)
        return report

    def cmd_all(self) -> RunReport:
        self.cmd_generate()
        return self.cmd_run(self.cfg.output_dir)


__all__ = ["Pipeline", "GenerationResult", "select_operations", "happy_case_name"]
