"""Package-wide error types, mapped to CLI exit codes 3 and 4."""


class IntractableError(RuntimeError):
    """Problem size exceeds a configured limit; message carries the estimate."""


class NumericalError(RuntimeError):
    """A linear solve or optimization failed to reach its tolerance."""
