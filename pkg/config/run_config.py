import json
from pathlib import Path
from typing import Any, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from config.settings import (
    INIT_SCRIPT_TIMEOUT,
    MAX_FUNCTIONAL_SCENARIOS,
    MAX_RETRIES_PER_STEP,
    MAX_SEQUENCE_LEN,
    MAX_STRUCTURAL_SCENARIOS,
    OUTPUT_DIR,
    REQUEST_TIMEOUT,
    SUMMARY_BUDGET,
    VERIFY_TLS,
)
from core.errors import ConfigError
from core.llm_client import ProviderConfig
from core.negative_generator import CaseKind
from core.request_engine import EnvInitScript

KIND_NAMES = {
    "happy": CaseKind.HAPPY_PATH,
    "structural": CaseKind.STRUCTURAL,
    "functional": CaseKind.FUNCTIONAL,
}


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    spec: Optional[str] = None
    base_url: Optional[str] = None
    operations: list[str] = Field(default_factory=list)
    kinds: list[str] = Field(default_factory=lambda: list(KIND_NAMES))
    init_script: Optional[str] = None
    init_cwd: Optional[str] = None
    init_timeout: float = Field(default=INIT_SCRIPT_TIMEOUT, gt=0)
    guidance: Optional[str] = None
    guidance_file: Optional[str] = None
    sequences: dict[str, list[str]] = Field(default_factory=dict)
    replay: Optional[str] = None
    provider: ProviderConfig = Field(default_factory=ProviderConfig)
    max_retries_per_step: int = Field(default=MAX_RETRIES_PER_STEP, ge=0)
    max_sequence_len: int = Field(default=MAX_SEQUENCE_LEN, gt=0)
    max_structural: int = Field(default=MAX_STRUCTURAL_SCENARIOS, gt=0)
    max_functional: int = Field(default=MAX_FUNCTIONAL_SCENARIOS, gt=0)
    request_timeout: float = Field(default=REQUEST_TIMEOUT, gt=0)
    verify_tls: bool = VERIFY_TLS
    summary_budget: int = Field(default=SUMMARY_BUDGET, ge=256)
    output_dir: str = OUTPUT_DIR

    @field_validator("kinds")
    @classmethod
    def _known_kinds(cls, value: list[str]) -> list[str]:
        if not value:
            raise ValueError("at least one test kind is required")
        unknown = [kind for kind in value if kind not in KIND_NAMES]
        if unknown:
            raise ValueError(f"unknown test kinds {unknown}; use {', '.join(KIND_NAMES)}")
        return list(dict.fromkeys(value))

    @property
    def case_kinds(self) -> set[CaseKind]:
        return {KIND_NAMES[kind] for kind in self.kinds}

    def guidance_text(self) -> Optional[str]:
        parts = [self.guidance] if self.guidance else []
        if self.guidance_file:
            path = Path(self.guidance_file)
            if not path.exists():
                raise ConfigError(f"Guidance file not found: {self.guidance_file}")
            parts.append(path.read_text(encoding="utf-8"))
        text = "\n\n".join(p.strip() for p in parts if p.strip())
        return text or None

    def init(self) -> Optional[EnvInitScript]:
        if not self.init_script:
            return None
        return EnvInitScript(command=self.init_script, working_directory=self.init_cwd, timeout_s=self.init_timeout)

    def echo(self) -> dict:
        """Configuration as recorded in report.json."""
        return self.model_dump(mode="json", exclude={"output_dir"})


def parse_sequences(values: Optional[list[str]]) -> dict[str, list[str]]:
    """Parse TARGET=op1,op2,TARGET entries given on the command line."""
    sequences: dict[str, list[str]] = {}
    for value in values or []:
        target, sep, steps = value.partition("=")
        ops = [op.strip() for op in steps.split(",") if op.strip()]
        if not sep or not target.strip() or not ops:
            raise ConfigError(f"Invalid sequence '{value}'; expected TARGET=op1,op2,TARGET")
        sequences[target.strip()] = ops
    return sequences


def _read_config_file(config_file: str) -> dict:
    path = Path(config_file)
    if not path.exists():
        raise ConfigError(f"Config file not found: {config_file}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot parse config file {config_file}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {config_file} must contain a mapping")
    return data


def load_run_config(config_file: Optional[str] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Config file values, with command-line overrides taking precedence."""
    data = _read_config_file(config_file) if config_file else {}
    for key, value in (overrides or {}).items():
        if value is None or value == [] or value == {}:
            continue
        if key == "provider":
            data["provider"] = {**(data.get("provider") or {}), **value}
        elif key == "sequences":
            data["sequences"] = {**(data.get("sequences") or {}), **value}
        else:
            data[key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid configuration: {problems}") from e
