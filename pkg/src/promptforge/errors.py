"""Typed errors shared across the package.

Every error carries a stable ``code`` string that the HTTP layer maps into
``{code, message, details}`` bodies, so API clients and tests can match on
codes instead of message text.
"""

from __future__ import annotations

from typing import Any


class PromptForgeError(Exception):
    """Base class; ``code`` is the wire-visible identifier."""

    code = "Error"

    def __init__(self, message: str = "", **details: Any):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details


# prompt model
class IncompletePrompt(PromptForgeError):
    code = "IncompletePrompt"


class DuplicateComponent(PromptForgeError):
    code = "DuplicateComponent"


class MissingPlaceholder(PromptForgeError):
    code = "MissingPlaceholder"


# content packs
class PackParseError(PromptForgeError):
    code = "ParseError"


class PackValidationError(PromptForgeError):
    """Aggregate of all violations found in a pack (never fail-fast)."""

    code = "PackValidationError"

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} violation(s): {lines}")


class NoLearningScenarios(PromptForgeError):
    code = "NoLearningScenarios"


class UnknownScenario(PromptForgeError):
    code = "UnknownScenario"


class PositionOutOfRange(PromptForgeError):
    code = "PositionOutOfRange"


# builder engine
class WrongPhase(PromptForgeError):
    code = "WrongPhase"


class OptionOutOfRange(PromptForgeError):
    code = "OptionOutOfRange"


class EmptySegment(PromptForgeError):
    code = "EmptySegment"


class StepNotPassed(PromptForgeError):
    code = "StepNotPassed"


# validation engine
class NoRuleSpec(PromptForgeError):
    code = "NoRuleSpec"


class UnresolvedPlaceholder(PromptForgeError):
    code = "UnresolvedPlaceholder"


class ValidatorUnavailable(PromptForgeError):
    code = "ValidatorUnavailable"


class JudgeUnavailable(ValidatorUnavailable):
    code = "JudgeUnavailable"


class JudgeMalformed(PromptForgeError):
    code = "JudgeMalformed"


# llm gateway
class GatewayError(PromptForgeError):
    code = "GatewayError"


class GatewayTimeout(GatewayError):
    code = "Timeout"


class RateLimited(GatewayError):
    code = "RateLimited"


class AuthFailed(GatewayError):
    code = "AuthFailed"


class TransportError(GatewayError):
    code = "TransportError"


class MockMiss(GatewayError):
    code = "MockMiss"


# storage / service
class IoError(PromptForgeError):
    code = "IoError"


class StorageFull(IoError):
    code = "StorageFull"


class InvalidTransition(PromptForgeError):
    code = "InvalidTransition"


class BindError(PromptForgeError):
    code = "BindError"


class PackLoadError(PromptForgeError):
    code = "PackLoadError"


class AuthError(PromptForgeError):
    code = "AuthError"


class Forbidden(AuthError):
    code = "Forbidden"


class IdempotencyConflict(PromptForgeError):
    code = "IdempotencyConflict"


class UnknownSession(PromptForgeError):
    code = "UnknownSession"


class SchemaError(PromptForgeError):
    code = "SchemaError"


# analytics
class SubjectMismatch(PromptForgeError):
    code = "SubjectMismatch"


class LengthMismatch(PromptForgeError):
    code = "LengthMismatch"


class DegenerateVariance(PromptForgeError):
    code = "DegenerateVariance"


class InsufficientData(PromptForgeError):
    code = "InsufficientData"


class MissingPhase(PromptForgeError):
    code = "MissingPhase"
