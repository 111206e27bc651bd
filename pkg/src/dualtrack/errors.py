"""Exception hierarchy for the engine and harness."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine-raised errors."""


class ConfigurationError(EngineError):
    """A referenced persona/backend/config key does not exist or is invalid."""


class NotFoundError(EngineError):
    """Unknown session, task, or tool id."""


class SchemaViolation(EngineError):
    """A wire payload failed schema validation.

    Carries the byte offset of the offending token when known.
    """

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at byte {position})")
        self.position = position


class PlanValidationError(EngineError):
    """Plan is cyclic, references unknown tools, or breaks step numbering."""


class RegistrationError(EngineError):
    """Duplicate tool/profile registration."""


class DispatchError(EngineError):
    """No agent profile could be selected."""


class ValidityError(EngineError):
    """Tool arguments rejected before any latency was charged."""


class DelegationError(EngineError):
    """Delegation refused (depth cap or unknown delegate)."""


class BusRejection(EngineError):
    """Event rejected by the sync bus (unknown task, terminal repeated)."""


class CorpusError(EngineError):
    """Benchmark corpus failed validation; lists offending cases."""

    def __init__(self, problems: list[str]):
        super().__init__("corpus validation failed:\n" + "\n".join(problems))
        self.problems = problems
