"""Define package exceptions."""
from typing import Optional


class BaseFCDDError(Exception):
    """Define a base error."""

    exit_code = 1


class ConfigError(BaseFCDDError):
    """Define an error related to an invalid run configuration."""

    exit_code = 2


class SpecError(ConfigError):
    """Define an error when a backbone chain is inadmissible."""

    def __init__(self, msg: str, layer_index: Optional[int] = None) -> None:
        """Initialize a spec error."""
        if layer_index is not None:
            msg = f"Layer {layer_index}: {msg}"
        super().__init__(msg)
        self.layer_index = layer_index


class RejectedInputError(BaseFCDDError, ValueError):
    """Define an error when a function receives out-of-domain input."""

    exit_code = 2


class DataError(BaseFCDDError):
    """Define a dataset ingestion error."""

    exit_code = 3


class ShortfallError(DataError):
    """Define an error when a stratum holds too few images for a sample."""

    def __init__(self, stratum: str, requested: int, available: int) -> None:
        """Initialize a shortfall error."""
        super().__init__(
            f"Stratum '{stratum}' has {available} images; {requested} requested "
            f"(short by {requested - available})"
        )
        self.stratum = stratum
        self.requested = requested
        self.available = available


class CheckpointError(DataError):
    """Define an error related to an unreadable or incompatible checkpoint."""


class UndefinedMetricError(BaseFCDDError):
    """Define an error when a metric is undefined for the given labels."""

    exit_code = 3


class NumericFailure(BaseFCDDError):
    """Define an error when training produces non-finite values."""

    exit_code = 4


class ContractViolation(BaseFCDDError):
    """Define an error when an API is used out of order."""

    exit_code = 4
