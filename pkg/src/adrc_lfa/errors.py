"""Exception types shared across the package."""


class LfaError(Exception):
    """Base class for all package errors."""


class ParseError(LfaError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyDatasetError(LfaError):
    pass


class ConfigError(LfaError, ValueError):
    pass


class EvaluationError(LfaError):
    pass


class DivergenceError(LfaError, ArithmeticError):
    """Raised when a factor or controller value becomes non-finite.

    ``instance`` is the position of the offending instance in the training
    set, or None when the failure is not tied to one instance.
    """

    def __init__(self, message: str, instance: int | None = None):
        super().__init__(message)
        self.instance = instance


class DuplicateEntryWarning(UserWarning):
    pass
