"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config/usage problems exit 1,
numeric divergence exits 3, anything else exits 2.
"""


class PromptFusionError(Exception):
    """Base class for all package errors."""


class DimensionError(PromptFusionError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(PromptFusionError, ValueError):
    """A configuration value or document is invalid.

    ``problems`` carries one message per offending field so callers can
    report every problem at once.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class UsageError(PromptFusionError):
    """An API was called in a way its contract forbids."""


class NumericError(PromptFusionError):
    """Non-finite or degenerate values where finite ones are required."""


class DivergenceError(PromptFusionError):
    """Training produced a non-finite loss; carries a diagnostic snapshot."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class ArchiveError(PromptFusionError):
    """A tensor archive file is malformed or truncated."""
