import sys
from pathlib import Path
from typing import Annotated, Any, Optional

import typer
from loguru import logger

from config.run_config import RunConfig, load_run_config, parse_sequences
from config.settings import LOG_LEVEL, OUTPUT_DIR
from core.errors import ToolError
from core.pipeline import Pipeline
from core.test_runner import RunReport
from core.workspace import REPORT_TXT, load_report, load_triage, write_report

app = typer.Typer(
    name="restgen",
    help="Generate, run and report LLM-derived test suites for a REST service described by OpenAPI.",
    no_args_is_help=True,
    add_completion=False,
)

ConfigFile = Annotated[Optional[str], typer.Option("--config", "-c", help="JSON or YAML file with any of the options below")]
Spec = Annotated[Optional[str], typer.Option("--spec", "-s", help="OpenAPI 3.x document (path or http(s) URL)")]
BaseUrl = Annotated[Optional[str], typer.Option("--base-url", help="Base URL of the service under test")]
Operations = Annotated[Optional[list[str]], typer.Option("--operation", "-o", help="Operation id or 'METHOD /path' glob; repeatable")]
Kinds = Annotated[Optional[list[str]], typer.Option("--kind", "-k", help="happy, structural or functional; repeatable")]
InitScript = Annotated[Optional[str], typer.Option("--init-script", help="Shell command that resets the service state")]
InitCwd = Annotated[Optional[str], typer.Option("--init-cwd", help="Working directory for the init script")]
InitTimeout = Annotated[Optional[float], typer.Option("--init-timeout", help="Init script timeout in seconds")]
Guidance = Annotated[Optional[str], typer.Option("--guidance", help="Extra instructions for the LLM, e.g. credentials to use")]
GuidanceFile = Annotated[Optional[str], typer.Option("--guidance-file", help="File with extra instructions for the LLM")]
Sequences = Annotated[Optional[list[str]], typer.Option("--sequence", help="Custom sequence TARGET=op1,op2,TARGET; repeatable")]
Replay = Annotated[Optional[str], typer.Option("--replay", help="Scripted LLM replies instead of a live provider")]
Model = Annotated[Optional[str], typer.Option("--model", help="LLM model name")]
Endpoint = Annotated[Optional[str], typer.Option("--llm-endpoint", help="OpenAI-compatible chat completions URL")]
ApiKeyEnv = Annotated[Optional[str], typer.Option("--api-key-env", help="Name of the environment variable holding the API key")]
MaxRetries = Annotated[Optional[int], typer.Option("--max-retries-per-step", help="Extra attempts per happy-path step")]
MaxSequence = Annotated[Optional[int], typer.Option("--max-sequence-len", help="Longest operation sequence accepted")]
MaxStructural = Annotated[Optional[int], typer.Option("--max-structural", help="Structural scenarios per operation")]
MaxFunctional = Annotated[Optional[int], typer.Option("--max-functional", help="Functional scenarios per operation")]
RequestTimeout = Annotated[Optional[float], typer.Option("--request-timeout", help="HTTP timeout in seconds")]
NoVerifyTls = Annotated[bool, typer.Option("--no-verify-tls", help="Skip TLS certificate verification")]
SummaryBudget = Annotated[Optional[int], typer.Option("--summary-budget", help="Characters of schema summary per prompt")]
Output = Annotated[Optional[str], typer.Option("--output", "-O", help=f"Workspace directory (default {OUTPUT_DIR})")]
LogLevel = Annotated[str, typer.Option("--log-level", help="DEBUG, INFO, WARNING or ERROR")]


def setup_logging(level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {message}")


def _config(config_file: Optional[str], overrides: dict[str, Any]) -> RunConfig:
    provider = {k: v for k, v in overrides.pop("provider", {}).items() if v is not None}
    if provider:
        overrides["provider"] = provider
    if overrides.pop("no_verify_tls", False):
        overrides["verify_tls"] = False
    return load_run_config(config_file, overrides)


def _summary(report: RunReport) -> None:
    metrics = report.metrics()
    ratio = metrics["tokens_per_test_case"]
    typer.echo(
        f"operations covered {metrics['operations_covered']}/{metrics['operations_total']}, "
        f"server errors {metrics['server_errors']}, test cases {metrics['test_case_count']}, "
        f"tokens per test case {ratio['value'] if ratio else 'n/a'}"
    )
    if report.executed:
        typer.echo(", ".join(f"{k} {v}" for k, v in metrics["verdicts"].items()))


def _fail(e: ToolError) -> None:
    logger.debug(f"{type(e).__name__}: {e}")
    typer.echo(f"error: {e}", err=True)
    raise typer.Exit(2)


@app.callback()
def main(log_level: LogLevel = LOG_LEVEL) -> None:
    setup_logging(log_level)


@app.command()
def generate(
    config: ConfigFile = None,
    spec: Spec = None,
    base_url: BaseUrl = None,
    operation: Operations = None,
    kind: Kinds = None,
    init_script: InitScript = None,
    init_cwd: InitCwd = None,
    init_timeout: InitTimeout = None,
    guidance: Guidance = None,
    guidance_file: GuidanceFile = None,
    sequence: Sequences = None,
    replay: Replay = None,
    model: Model = None,
    llm_endpoint: Endpoint = None,
    api_key_env: ApiKeyEnv = None,
    max_retries_per_step: MaxRetries = None,
    max_sequence_len: MaxSequence = None,
    max_structural: MaxStructural = None,
    max_functional: MaxFunctional = None,
    request_timeout: RequestTimeout = None,
    no_verify_tls: NoVerifyTls = False,
    summary_budget: SummaryBudget = None,
    output: Output = None,
) -> None:
    """Build happy paths and negative test cases and write them to the workspace."""
    try:
        cfg = _config(config, _generation_overrides(locals()))
        report = Pipeline(cfg).cmd_generate()
    except ToolError as e:
        _fail(e)
    _summary(report)
    typer.echo(f"workspace written to {cfg.output_dir}")


def _generation_overrides(values: dict[str, Any]) -> dict[str, Any]:
    return {
        "spec": values["spec"],
        "base_url": values["base_url"],
        "operations": values["operation"],
        "kinds": values["kind"],
        "init_script": values["init_script"],
        "init_cwd": values["init_cwd"],
        "init_timeout": values["init_timeout"],
        "guidance": values["guidance"],
        "guidance_file": values["guidance_file"],
        "sequences": parse_sequences(values["sequence"]),
        "replay": values["replay"],
        "provider": {"model": values["model"], "endpoint": values["llm_endpoint"], "api_key_env": values["api_key_env"]},
        "max_retries_per_step": values["max_retries_per_step"],
        "max_sequence_len": values["max_sequence_len"],
        "max_structural": values["max_structural"],
        "max_functional": values["max_functional"],
        "request_timeout": values["request_timeout"],
        "no_verify_tls": values["no_verify_tls"],
        "summary_budget": values["summary_budget"],
        "output_dir": values["output"],
    }


@app.command()
def run(
    config: ConfigFile = None,
    base_url: BaseUrl = None,
    init_script: InitScript = None,
    init_cwd: InitCwd = None,
    init_timeout: InitTimeout = None,
    request_timeout: RequestTimeout = None,
    no_verify_tls: NoVerifyTls = False,
    output: Output = None,
) -> None:
    """Re-execute the suites stored in a workspace; makes no LLM calls."""
    try:
        cfg = _config(config, {
            "base_url": base_url,
            "init_script": init_script,
            "init_cwd": init_cwd,
            "init_timeout": init_timeout,
            "request_timeout": request_timeout,
            "no_verify_tls": no_verify_tls,
            "output_dir": output,
        })
        report = Pipeline(cfg).cmd_run()
    except ToolError as e:
        _fail(e)
    _summary(report)
    raise typer.Exit(report.exit_code)


@app.command("all")
def all_(
    config: ConfigFile = None,
    spec: Spec = None,
    base_url: BaseUrl = None,
    operation: Operations = None,
    kind: Kinds = None,
    init_script: InitScript = None,
    init_cwd: InitCwd = None,
    init_timeout: InitTimeout = None,
    guidance: Guidance = None,
    guidance_file: GuidanceFile = None,
    sequence: Sequences = None,
    replay: Replay = None,
    model: Model = None,
    llm_endpoint: Endpoint = None,
    api_key_env: ApiKeyEnv = None,
    max_retries_per_step: MaxRetries = None,
    max_sequence_len: MaxSequence = None,
    max_structural: MaxStructural = None,
    max_functional: MaxFunctional = None,
    request_timeout: RequestTimeout = None,
    no_verify_tls: NoVerifyTls = False,
    summary_budget: SummaryBudget = None,
    output: Output = None,
) -> None:
    """Generate the suites, then run them."""
    try:
        cfg = _config(config, _generation_overrides(locals()))
        report = Pipeline(cfg).cmd_all()
    except ToolError as e:
        _fail(e)
    _summary(report)
    typer.echo(f"report written to {Path(cfg.output_dir) / REPORT_TXT}")
    raise typer.Exit(report.exit_code)


@app.command()
def report(
    output: Output = None,
    triage: Annotated[Optional[str], typer.Option("--triage", help="YAML/JSON mapping of test case name to Bug, Enhancement or Invalid")] = None,
) -> None:
    """Re-render report.txt, optionally with a triage table, and print it."""
    root = Path(output or OUTPUT_DIR)
    try:
        loaded, directories = load_report(root)
        labels = load_triage(triage) if triage else None
        write_report(root, loaded, directories, labels)
    except ToolError as e:
        _fail(e)
    typer.echo((root / REPORT_TXT).read_text(encoding="utf-8"), nl=False)


if __name__ == "__main__":
    app()
