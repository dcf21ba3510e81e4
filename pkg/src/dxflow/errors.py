"""Exception hierarchy shared across the engine.

Exceptions are grouped so the CLI can map them onto its exit codes:
usage problems, validation problems (bad inputs, bad plans, bad config)
and runtime problems (tool failures, missing fixtures, transport).
"""
from __future__ import annotations


class EngineError(Exception):
    """Base class for every error raised by this package."""


class UsageError(EngineError):
    """Bad command-line usage or malformed invocation."""


# -- validation-type errors (CLI exit code 2) --------------------------------

class ValidationError(EngineError):
    """Input data, configuration, or a plan failed validation."""


class SchemaError(ValidationError):
    """A JSON document does not match the expected schema."""


class DuplicateDocument(ValidationError):
    def __init__(self, doc_id: str):
        super().__init__(f"duplicate doc_id: {doc_id!r}")
        self.doc_id = doc_id


class UnknownDisease(ValidationError):
    def __init__(self, disease_id: str):
        super().__init__(f"no plan template for disease_id: {disease_id!r}")
        self.disease_id = disease_id


class MissingTool(ValidationError):
    def __init__(self, kind: str, detail: str = ""):
        msg = f"registry provides no usable tool of kind {kind!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.kind = kind


class PlanParseError(ValidationError):
    """The model reply could not be parsed into a plan."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class PlanInvalid(ValidationError):
    """A compiled plan failed structural validation."""

    def __init__(self, findings):
        super().__init__(
            "plan invalid: " + "; ".join(f"{f.category.value}: {f.message}" for f in findings)
        )
        self.findings = list(findings)


# -- runtime-type errors (CLI exit code 3) ------------------------------------

class RuntimeFailure(EngineError):
    """Execution-time failure that is not a validation problem."""


class EmptyDisc(RuntimeFailure):
    pass


class EmptyStructure(RuntimeFailure):
    pass


class InvalidVolume(RuntimeFailure):
    pass


class InvalidInput(RuntimeFailure):
    pass


class ToolTimeout(RuntimeFailure):
    pass


class ToolUnreachable(RuntimeFailure):
    pass


class ToolError(RuntimeFailure):
    pass


class NoRule(RuntimeFailure):
    pass


class UnitMismatch(RuntimeFailure):
    pass


class ValueOutOfRange(RuntimeFailure):
    pass


class UnknownIndicator(RuntimeFailure):
    pass


class DegenerateWeights(RuntimeFailure):
    pass


class NoIndicators(RuntimeFailure):
    pass


class WeightParseError(RuntimeFailure):
    pass


class ClassEmpty(RuntimeFailure):
    pass


class EmptyBatch(RuntimeFailure):
    pass


class ReplayMiss(RuntimeFailure):
    def __init__(self, digest: str):
        super().__init__(f"no cached transcript for request digest {digest}")
        self.digest = digest


class TransportError(RuntimeFailure):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status
