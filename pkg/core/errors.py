class ToolError(Exception):
    """Base class for every error the tool reports to its caller."""


class ConfigError(ToolError):
    pass


# --- OpenAPI documents -------------------------------------------------------

class MalformedDocument(ToolError):
    pass


class UnsupportedVersion(ToolError):
    pass


class UnresolvableRef(ToolError):
    pass


class ExternalRefNotSupported(ToolError):
    pass


# --- execution trace ---------------------------------------------------------

class TraceError(ToolError):
    pass


class InvalidTraceKey(TraceError):
    pass


class DuplicateKey(TraceError):
    pass


class TraceFrozen(TraceError):
    pass


class PayloadTooLarge(TraceError):
    def __init__(self, message: str, pair_count: int):
        super().__init__(message)
        self.pair_count = pair_count


class MissingKey(TraceError):
    pass


class DanglingReference(TraceError):
    pass


class CycleDetected(TraceError):
    pass


class KeySetMismatch(TraceError):
    pass


class UnflattenConflict(TraceError):
    pass


class TraceResolutionError(TraceError):
    """resolve_all failure carrying the key whose resolution failed."""

    def __init__(self, key: str, cause: TraceError):
        super().__init__(f"Cannot resolve {key}: {cause}")
        self.key = key
        self.cause = cause


# --- LLM gateway -------------------------------------------------------------

class LLMError(ToolError):
    pass


class ProviderUnreachable(LLMError):
    pass


class ProviderConfigError(LLMError):
    pass


class LLMTimeout(LLMError):
    pass


class ReplayExhausted(LLMError):
    pass


# provider outages, recorded per operation during generation
LLM_UNAVAILABLE = (ProviderUnreachable, LLMTimeout, ReplayExhausted)


class MalformedAfterRetries(LLMError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class ReplyRejected(LLMError):
    """Raised by reply validators; the gateway re-prompts with the message."""


class NoTestCases(ToolError):
    pass


# --- happy path --------------------------------------------------------------

class UnknownOperation(ToolError):
    pass


class PlanInvalid(ReplyRejected):
    pass


class SequenceTooLong(ReplyRejected):
    pass


class AssignmentInvalid(ToolError):
    pass


# --- request engine ----------------------------------------------------------

class MissingRequiredValue(ToolError):
    pass


class UnsupportedMediaType(ToolError):
    pass


class InvalidHeaderName(ToolError):
    pass


class TransportError(ToolError):
    pass


class ScriptTimeout(ToolError):
    pass


class ScriptNotFound(ToolError):
    pass


# --- negative scenarios ------------------------------------------------------

class NoScenarios(ToolError):
    pass


class ConstraintNotViolated(ReplyRejected):
    pass


class UnknownKey(ToolError):
    pass


# --- suites, runs and workspaces ---------------------------------------------

class DanglingDependency(ToolError):
    pass


class CollectionInvalid(ToolError):
    pass


class WorkspaceError(ToolError):
    pass
