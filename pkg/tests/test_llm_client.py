import json
from fractions import Fraction
from unittest.mock import Mock, patch

import pytest
import requests
from pydantic import ValidationError

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
from core.llm_client import (
    ChatMessage,
    LLMClient,
    OpenAICompatProvider,
    ProviderConfig,
    Purpose,
    ScriptedProvider,
    StructuredRequest,
    TokenLedger,
    TokenUsage,
    tokens_per_test_case,
)
from tests.helpers import entry, write_replay

SCHEMA = {"type": "object", "required": ["answer"], "properties": {"answer": {"type": "integer"}}}


def _request(purpose: Purpose = Purpose.VALUES) -> StructuredRequest:
    return StructuredRequest(
        messages=[ChatMessage(role="system", content="Answer in JSON."), ChatMessage(role="user", content="Pick a number.")],
        output_schema=SCHEMA,
        purpose=purpose,
    )


def _http_reply(content: str, status_code: int = 200, prompt_tokens: int = 12, completion_tokens: int = 4) -> Mock:
    mock_response = Mock()
    mock_response.status_code = status_code
    mock_response.json.return_value = {
        "choices": [{"message": {"content": content}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }
    return mock_response


def test_missing_api_key_is_a_config_error(monkeypatch):
    monkeypatch.delenv("RESTGEN_TEST_KEY", raising=False)
    with pytest.raises(ProviderConfigError):
        OpenAICompatProvider(ProviderConfig(api_key_env="RESTGEN_TEST_KEY"))


def test_openai_compatible_completion(monkeypatch):
    monkeypatch.setenv("RESTGEN_TEST_KEY", "sk-test")
    client = LLMClient(OpenAICompatProvider(ProviderConfig(api_key_env="RESTGEN_TEST_KEY", model="m1")))
    with patch("requests.post") as mock_post:
        mock_post.return_value = _http_reply('<think>easy</think>```json\n{"answer": 4}\n```')
        reply, usage = client.complete_structured(_request())

    assert reply == {"answer": 4}
    assert usage == TokenUsage(prompt_tokens=12, completion_tokens=4)
    kwargs = mock_post.call_args.kwargs
    assert kwargs["headers"]["Authorization"] == "Bearer sk-test"
    assert kwargs["json"]["model"] == "m1"
    assert kwargs["json"]["response_format"] == {"type": "json_object"}
    assert kwargs["json"]["messages"][1] == {"role": "user", "content": "Pick a number."}


def test_provider_errors(monkeypatch):
    monkeypatch.setenv("RESTGEN_TEST_KEY", "sk-test")
    provider = OpenAICompatProvider(ProviderConfig(api_key_env="RESTGEN_TEST_KEY"))
    messages = _request().messages

    with patch("requests.post") as mock_post:
        failing = _http_reply("")
        failing.status_code = 401
        failing.json.return_value = {"error": {"message": "invalid api key"}}
        mock_post.return_value = failing
        with pytest.raises(ProviderUnreachable, match="invalid api key"):
            provider.complete(messages, Purpose.PLAN, SCHEMA)

        mock_post.side_effect = requests.exceptions.Timeout()
        with pytest.raises(LLMTimeout):
            provider.complete(messages, Purpose.PLAN, SCHEMA)

        mock_post.side_effect = requests.exceptions.ConnectionError("refused")
        with pytest.raises(ProviderUnreachable):
            provider.complete(messages, Purpose.PLAN, SCHEMA)


@pytest.mark.parametrize("body", [
    requests.exceptions.JSONDecodeError("Expecting value", "<html>gateway</html>", 0),
    {"choices": ["not a message"]},
    ["unexpected"],
])
def test_non_completion_replies_are_provider_errors(monkeypatch, body):
    monkeypatch.setenv("RESTGEN_TEST_KEY", "sk-test")
    provider = OpenAICompatProvider(ProviderConfig(api_key_env="RESTGEN_TEST_KEY"))
    with patch("requests.post") as mock_post:
        reply = _http_reply("")
        if isinstance(body, Exception):
            reply.json.side_effect = body
        else:
            reply.json.return_value = body
        mock_post.return_value = reply
        with pytest.raises(ProviderUnreachable, match="did not answer with a chat completion"):
            provider.complete(_request().messages, Purpose.PLAN, SCHEMA)


def test_invalid_replies_are_reprompted():
    provider = ScriptedProvider([
        entry("Values", "not json at all", prompt_tokens=5, completion_tokens=1),
        entry("Values", {"answer": "four"}, prompt_tokens=6, completion_tokens=2),
        entry("Values", {"answer": 4}, prompt_tokens=7, completion_tokens=3),
    ])
    recorder = Mock(wraps=provider)
    client = LLMClient(recorder, ProviderConfig(max_reprompts=2))

    reply, usage = client.complete_structured(_request())

    assert reply == {"answer": 4}
    assert usage == TokenUsage(prompt_tokens=18, completion_tokens=6)
    assert client.last_attempts == 3
    third_call = recorder.complete.call_args_list[2].args[0]
    assert len(third_call) == 6
    assert third_call[-1].role == "user"
    assert "rejected" in third_call[-1].content
    ledger = client.ledger.to_dict()
    assert ledger["invocations"] == 3
    assert ledger["total_tokens"] == 24
    assert ledger["by_purpose"]["Values"]["rejected"] == 2


def test_malformed_after_retries():
    provider = ScriptedProvider([entry("Plan", "{}")] * 2)
    client = LLMClient(provider, ProviderConfig(max_reprompts=1))
    with pytest.raises(MalformedAfterRetries) as error:
        client.complete_structured(_request(Purpose.PLAN))
    assert error.value.attempts == 2
    assert client.ledger.invocations == 2


def test_validator_rejections_surface_after_retries():
    def validate(reply):
        if reply["answer"] % 2:
            raise ReplyRejected("answer must be even")

    client = LLMClient(ScriptedProvider([entry("Values", {"answer": 3})] * 3))
    with pytest.raises(ReplyRejected, match="even"):
        client.complete_structured(_request(), validator=validate)

    client = LLMClient(ScriptedProvider([entry("Values", {"answer": 3}), entry("Values", {"answer": 2})]))
    reply, _ = client.complete_structured(_request(), validator=validate)
    assert reply == {"answer": 2}


def test_scripted_provider_queues_by_purpose(tmp_path):
    path = write_replay(tmp_path / "replay.json", [
        entry("Plan", {"n": 1}),
        entry("Values", {"n": 2}),
        entry("Plan", {"n": 3}),
    ])
    provider = ScriptedProvider.from_file(path)
    assert json.loads(provider.complete([], Purpose.PLAN, SCHEMA)[0]) == {"n": 1}
    assert json.loads(provider.complete([], Purpose.PLAN, SCHEMA)[0]) == {"n": 3}
    text, usage = provider.complete([], Purpose.VALUES, SCHEMA)
    assert json.loads(text) == {"n": 2}
    assert usage == TokenUsage(prompt_tokens=10, completion_tokens=5)
    with pytest.raises(ReplayExhausted):
        provider.complete([], Purpose.PLAN, SCHEMA)


def test_scripted_provider_reads_yaml_and_rejects_bad_entries(tmp_path):
    replay = tmp_path / "replay.yaml"
    replay.write_text("entries:\n  - purpose: Scenarios\n    response: '{\"scenarios\": []}'\n")
    provider = ScriptedProvider.from_file(str(replay))
    assert provider.complete([], Purpose.SCENARIOS, SCHEMA)[0] == '{"scenarios": []}'

    with pytest.raises(ConfigError):
        ScriptedProvider([{"purpose": "Guess", "response": {}}])
    with pytest.raises(ConfigError):
        ScriptedProvider.from_file(str(tmp_path / "missing.json"))


def test_structured_request_needs_an_object_schema():
    with pytest.raises(ValidationError):
        StructuredRequest(messages=[], output_schema={"type": "array"}, purpose=Purpose.PLAN)
    with pytest.raises(ValidationError):
        ChatMessage(role="tool", content="x")


def test_tokens_per_test_case():
    ledger = TokenLedger()
    ledger.record(Purpose.PLAN, TokenUsage(prompt_tokens=100, completion_tokens=10), True)
    ledger.record(Purpose.VALUES, TokenUsage(prompt_tokens=50, completion_tokens=10), False)
    assert tokens_per_test_case(ledger, 4) == Fraction(170, 4)
    assert tokens_per_test_case(TokenUsage(prompt_tokens=1, completion_tokens=2), 3) == 1
    assert tokens_per_test_case(9, 6) == Fraction(3, 2)
    with pytest.raises(NoTestCases):
        tokens_per_test_case(ledger, 0)
