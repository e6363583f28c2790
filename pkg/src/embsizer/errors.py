"""Exception hierarchy shared across the package."""


class EmbsizerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EmbsizerError):
    """Invalid configuration: bad shapes, unknown options, out-of-range settings."""


class DataError(EmbsizerError):
    """Malformed input data. Carries a line number when one is known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericsError(EmbsizerError):
    """NaN/Inf encountered in a parameter, activation, or loss."""


class DegenerateBatchError(EmbsizerError):
    """Batch too small for the requested operation (e.g. batchnorm on one row)."""


class MetricError(EmbsizerError):
    """Metric undefined for the given inputs (single class, too few items)."""


class StaleArtifactError(EmbsizerError):
    """Artifact belongs to a different dataset than the one supplied."""
