import json
import os
import re
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Union

import jsonschema
import requests
import yaml
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config.settings import (
    LLM_API_KEY_ENV,
    LLM_ENDPOINT,
    LLM_JSON_MODE,
    LLM_MAX_REPROMPTS,
    LLM_MODEL,
    LLM_TEMPERATURE,
    LLM_TIMEOUT,
)
from core.errors import (
    ConfigError,
    LLMTimeout,
    MalformedAfterRetries,
    NoTestCases,
    ProviderConfigError,
    ProviderUnreachable,
    ReplayExhausted,
    ReplyRejected,
)


class Purpose(str, Enum):
    PLAN = "Plan"
    VALUES = "Values"
    SCENARIOS = "Scenarios"
    INVALID_VALUES = "InvalidValues"


class ChatMessage(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: str
    content: str

    @field_validator("role")
    @classmethod
    def _known_role(cls, value: str) -> str:
        if value not in ("system", "user", "assistant"):
            raise ValueError(f"Unknown chat role: {value}")
        return value

    @field_validator("content")
    @classmethod
    def _non_empty(cls, value: str) -> str:
        if not value or not value.strip():
            raise ValueError("Chat message content must not be empty")
        return value


class ProviderConfig(BaseModel):
    endpoint: str = LLM_ENDPOINT
    model: str = LLM_MODEL
    api_key_env: str = LLM_API_KEY_ENV
    timeout_s: float = Field(default=LLM_TIMEOUT, gt=0)
    max_reprompts: int = Field(default=LLM_MAX_REPROMPTS, ge=0)
    temperature: float = LLM_TEMPERATURE
    json_mode: bool = LLM_JSON_MODE


class TokenUsage(BaseModel):
    model_config = ConfigDict(frozen=True)

    prompt_tokens: int = Field(default=0, ge=0)
    completion_tokens: int = Field(default=0, ge=0)

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            prompt_tokens=self.prompt_tokens + other.prompt_tokens,
            completion_tokens=self.completion_tokens + other.completion_tokens,
        )


class StructuredRequest(BaseModel):
    messages: list[ChatMessage]
    output_schema: dict
    purpose: Purpose

    @field_validator("output_schema")
    @classmethod
    def _single_object(cls, value: dict) -> dict:
        if value.get("type") != "object":
            raise ValueError("output_schema must describe a single top-level object")
        return value


class TokenLedger:
    """Single-writer accumulator of every provider invocation."""

    def __init__(self):
        self.records: list[tuple[Purpose, TokenUsage, bool]] = []

    def record(self, purpose: Purpose, usage: TokenUsage, accepted: bool) -> None:
        self.records.append((purpose, usage, accepted))

    @property
    def invocations(self) -> int:
        return len(self.records)

    @property
    def usage(self) -> TokenUsage:
        total = TokenUsage()
        for _, usage, _ in self.records:
            total = total + usage
        return total

    @property
    def total_tokens(self) -> int:
        return self.usage.total

    def to_dict(self) -> dict:
        by_purpose: dict[str, dict] = {}
        for purpose, usage, accepted in self.records:
            entry = by_purpose.setdefault(purpose.value, {
                "invocations": 0, "rejected": 0, "prompt_tokens": 0, "completion_tokens": 0,
            })
            entry["invocations"] += 1
            entry["rejected"] += 0 if accepted else 1
            entry["prompt_tokens"] += usage.prompt_tokens
            entry["completion_tokens"] += usage.completion_tokens
        usage = self.usage
        return {
            "invocations": self.invocations,
            "prompt_tokens": usage.prompt_tokens,
            "completion_tokens": usage.completion_tokens,
            "total_tokens": usage.total,
            "by_purpose": dict(sorted(by_purpose.items())),
        }


def tokens_per_test_case(ledger: Union[TokenLedger, TokenUsage, int], test_case_count: int) -> Fraction:
    """Total prompt plus completion tokens per test case, as an exact ratio."""
    if test_case_count < 1:
        raise NoTestCases("Tokens per test case is undefined without test cases")
    if isinstance(ledger, TokenLedger):
        total = ledger.total_tokens
    elif isinstance(ledger, TokenUsage):
        total = ledger.total
    else:
        total = int(ledger)
    return Fraction(total, test_case_count)


class LLMProvider(Protocol):
    def complete(self, messages: list[ChatMessage], purpose: Purpose, output_schema: dict) -> tuple[str, TokenUsage]:
        ...


class OpenAICompatProvider:
    """Chat-completions client for any OpenAI-compatible endpoint."""

    def __init__(self, cfg: ProviderConfig):
        self.cfg = cfg
        self.api_key = os.getenv(cfg.api_key_env)
        if not self.api_key:
            raise ProviderConfigError(
                f"Environment variable {cfg.api_key_env} is not set; export the API key or use --replay"
            )

    def complete(self, messages: list[ChatMessage], purpose: Purpose, output_schema: dict) -> tuple[str, TokenUsage]:
        headers = {
            "Authorization": f"Bearer {self.api_key}",
            "Content-Type": "application/json",
        }
        payload = {
            "model": self.cfg.model,
            "messages": [m.model_dump() for m in messages],
            "temperature": self.cfg.temperature,
        }
        if self.cfg.json_mode:
            payload["response_format"] = {"type": "json_object"}

        try:
            response = requests.post(self.cfg.endpoint, json=payload, headers=headers, timeout=self.cfg.timeout_s)
        except requests.exceptions.Timeout as e:
            logger.error(f"Timeout calling model {self.cfg.model} for {purpose.value}")
            raise LLMTimeout(f"LLM request timed out after {self.cfg.timeout_s}s") from e
        except requests.exceptions.RequestException as e:
            logger.error(f"Cannot reach LLM endpoint {self.cfg.endpoint}: {str(e)}")
            raise ProviderUnreachable(f"Cannot reach LLM endpoint {self.cfg.endpoint}: {e}") from e

        if response.status_code != 200:
            error_detail = f"HTTP {response.status_code}"
            try:
                error_data = response.json()
                if "error" in error_data:
                    error_detail = error_data["error"].get("message", error_detail)
            except (ValueError, AttributeError):
                pass
            logger.error(f"Error with model {self.cfg.model}: {error_detail}")
            raise ProviderUnreachable(f"LLM endpoint answered {error_detail}")

        try:
            result = response.json()
            usage = result.get("usage") or {}
            choices = result.get("choices") or []
            content = ((choices[0].get("message") or {}).get("content") or "") if choices else ""
            return content, TokenUsage(
                prompt_tokens=usage.get("prompt_tokens", 0) or 0,
                completion_tokens=usage.get("completion_tokens", 0) or 0,
            )
        except (ValueError, AttributeError, TypeError, IndexError) as e:
            logger.error(f"Unexpected reply from {self.cfg.endpoint}: {str(e)}")
            raise ProviderUnreachable(f"LLM endpoint {self.cfg.endpoint} did not answer with a chat completion: {e}") from e


class ScriptedProvider:
    """Replays recorded replies, matched by purpose tag in file order."""

    def __init__(self, entries: list[dict]):
        self.queues: dict[Purpose, list[dict]] = {purpose: [] for purpose in Purpose}
        self.calls = 0
        for index, entry in enumerate(entries):
            try:
                purpose = Purpose(entry["purpose"])
            except (KeyError, ValueError) as e:
                raise ConfigError(f"Replay entry {index} has no valid purpose tag") from e
            self.queues[purpose].append(entry)

    @classmethod
    def from_file(cls, path: str) -> "ScriptedProvider":
        replay = Path(path)
        if not replay.exists():
            raise ConfigError(f"Replay file not found: {path}")
        text = replay.read_text(encoding="utf-8")
        data = json.loads(text) if replay.suffix.lower() == ".json" else yaml.safe_load(text)
        if isinstance(data, dict):
            data = data.get("entries", [])
        if not isinstance(data, list):
            raise ConfigError(f"Replay file {path} must hold a list of entries")
        return cls(data)

    def complete(self, messages: list[ChatMessage], purpose: Purpose, output_schema: dict) -> tuple[str, TokenUsage]:
        self.calls += 1
        queue = self.queues[purpose]
        if not queue:
            raise ReplayExhausted(f"Replay file has no more {purpose.value} entries")
        entry = queue.pop(0)
        response = entry.get("response", "")
        text = response if isinstance(response, str) else json.dumps(response, ensure_ascii=False)
        return text, TokenUsage(**(entry.get("usage") or {}))


def _strip_hidden_thoughts(text: str) -> str:
    """Remove reasoning tags like <think>..</think> and markdown fences."""
    if not text:
        return ""
    cleaned = re.sub(r"<think>[\s\S]*?</think>", "", text, flags=re.IGNORECASE)
    cleaned = re.sub(r"</?(analysis|reasoning|scratchpad)>", "", cleaned, flags=re.IGNORECASE)
    fenced = re.search(r"```(?:json)?\s*([\s\S]*?)```", cleaned)
    if fenced:
        cleaned = fenced.group(1)
    return cleaned.strip()


Validator = Callable[[Any], None]


class LLMClient:
    """Structured completions with schema validation and bounded re-prompting."""

    def __init__(self, provider: LLMProvider, cfg: Optional[ProviderConfig] = None, ledger: Optional[TokenLedger] = None):
        self.provider = provider
        self.cfg = cfg or ProviderConfig()
        self.ledger = ledger if ledger is not None else TokenLedger()
        self.last_attempts = 0

    def complete_structured(self, req: StructuredRequest, validator: Optional[Validator] = None) -> tuple[Any, TokenUsage]:
        messages = list(req.messages)
        schema_validator = jsonschema.Draft202012Validator(req.output_schema)
        total = TokenUsage()
        last_error = "no attempt made"
        last_rejection: Optional[ReplyRejected] = None
        attempts = self.cfg.max_reprompts + 1

        for attempt in range(1, attempts + 1):
            self.last_attempts = attempt
            text, usage = self.provider.complete(messages, req.purpose, req.output_schema)
            total = total + usage

            parsed, problem, rejection = None, None, None
            try:
                parsed = json.loads(_strip_hidden_thoughts(text))
            except json.JSONDecodeError as e:
                problem = f"reply is not valid JSON ({e.msg})"
            if problem is None:
                error = jsonschema.exceptions.best_match(schema_validator.iter_errors(parsed))
                if error is not None:
                    location = "/".join(str(p) for p in error.path) or "<root>"
                    problem = f"reply does not match the schema at {location}: {error.message}"
            if problem is None and validator is not None:
                try:
                    validator(parsed)
                except ReplyRejected as e:
                    rejection = e
                    problem = str(e)

            self.ledger.record(req.purpose, usage, problem is None)
            if problem is None:
                logger.info(f"{req.purpose.value} reply accepted after {attempt} attempt(s)")
                return parsed, total

            last_rejection = rejection
            last_error = problem
            logger.warning(f"{req.purpose.value} reply rejected (attempt {attempt}/{attempts}): {problem}")
            messages = messages + [
                ChatMessage(role="assistant", content=text if text.strip() else "(empty reply)"),
                ChatMessage(
                    role="user",
                    content=f"Your reply was rejected: {problem}. Reply again with only a JSON object that matches the schema.",
                ),
            ]

        if last_rejection is not None:
            raise last_rejection
        raise MalformedAfterRetries(
            f"{req.purpose.value} reply still invalid after {attempts} attempts: {last_error}", attempts
        )
