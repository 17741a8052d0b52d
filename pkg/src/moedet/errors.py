"""Exception types shared across the package."""


class MoedetError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(MoedetError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(MoedetError, ValueError):
    """A configuration value is out of range or inconsistent."""


class DataError(MoedetError, ValueError):
    """Input data violates a precondition (empty signal, missing class, ...)."""


class RoutingError(MoedetError, ValueError):
    """A feature map was fed to an expert declared for a different feature kind."""


class MetricError(MoedetError, ValueError):
    """A metric is undefined for the given score set."""


class NumericsError(MoedetError, FloatingPointError):
    """Training produced non-finite values."""


class FormatError(MoedetError, ValueError):
    """A file does not match the expected on-disk format."""
