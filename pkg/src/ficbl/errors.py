"""Exception types shared across the package."""


class FicblError(Exception):
    """Base class for all package-specific errors."""


class DataFormatError(FicblError):
    """A file (IDX, CSV, model, rules) is malformed or inconsistent."""


class NumericError(FicblError):
    """A numeric precondition failed (e.g. more clusters than points)."""


class RuleSyntaxError(FicblError):
    """Rule text could not be parsed; carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class RuleInconsistentError(FicblError):
    """A rule update wiped out all probability mass for a concept."""


class PredictionError(FicblError):
    """Inference cannot produce a normalized posterior for a concept."""
