"""Exception taxonomy shared by all modules.

Exit-code mapping used by the CLI lives in cli.py; estimator and checker
code raises these instead of bare ValueError so callers can branch on the
failure class.
"""


class BrwLabError(Exception):
    """Base class for all package-specific failures."""


class OutOfRegime(BrwLabError):
    """Requested inverse temperature outside the modeled subcritical range."""


class DomainError(BrwLabError):
    """Argument outside a function's mathematical domain."""


class DegenerateBand(BrwLabError):
    """Truncation band carries no normal mass at double precision."""


class BudgetExceeded(BrwLabError):
    """Requested computation does not fit the configured memory/steps budget."""


class ConfigError(BrwLabError):
    """Malformed or schema-invalid run configuration."""


class IoError(BrwLabError):
    """Filesystem failure while persisting run artifacts."""


class PreconditionViolated(BrwLabError):
    """A checker's parameter constraint fails; message names the constraint."""

    def __init__(self, constraint: str, message: str = ""):
        self.constraint = constraint
        super().__init__(message or constraint)


class MomentConditionFailed(BrwLabError):
    """Offspring law violates the exponential-moment hypothesis."""

    def __init__(self, generation: int, message: str = ""):
        self.generation = generation
        super().__init__(message or f"moment condition fails at generation {generation}")


class EmptyWindow(BrwLabError):
    """No usable grid points for a tail fit or exceedance estimate."""


class Extinct(BrwLabError):
    """Every replicate produced an empty level set."""
