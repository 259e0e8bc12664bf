"""Exception types raised by the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a mathematical function."""


class SupportTooLargeError(ValueError):
    """Exact enumeration was requested over a support that is too large."""

    def __init__(self, size, limit):
        self.size = size
        self.limit = limit
        super().__init__(f"support has {size} elements, exceeding the limit of {limit}")


class EmptyPoolError(RuntimeError):
    """A vote was requested from an exhausted expert pool."""


class DatasetError(ValueError):
    """A dataset file is malformed or fails validation."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CorrelationUndefinedError(ValueError):
    """Pearson correlation requested for a vector with zero variance."""
