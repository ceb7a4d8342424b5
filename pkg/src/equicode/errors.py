"""Exception types shared across the package."""


class EquicodeError(Exception):
    """Base class for all package errors."""


class DimensionError(EquicodeError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigurationError(EquicodeError, ValueError):
    """Invalid or inconsistent configuration (bad keys, group mismatch, ...)."""


class NumericalError(EquicodeError, ArithmeticError):
    """NaN/Inf encountered where finite values are required."""


class SamplingError(EquicodeError, RuntimeError):
    """A data request could not be satisfied (e.g. empty action buffer)."""


class CheckpointError(EquicodeError, RuntimeError):
    """Checkpoint file corrupt or inconsistent with the current config."""
