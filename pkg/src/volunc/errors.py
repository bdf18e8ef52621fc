"""Exception types raised by the engine."""


class VolUncError(Exception):
    """Base class for all engine errors."""


class ArgumentError(VolUncError, ValueError):
    """Inputs are inconsistent (mismatched grids, empty inputs, bad indices)."""


class DomainError(VolUncError, ValueError):
    """A value lies outside the mathematical domain (non-SPD variance, non-adapted event, ...)."""


class ConfigurationError(VolUncError, ValueError):
    """A numerical configuration violates a stability or well-posedness condition."""


class ResourceError(VolUncError, RuntimeError):
    """The requested computation would exceed the configured memory/time budget."""
