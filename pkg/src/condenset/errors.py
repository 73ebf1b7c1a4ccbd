"""Exception hierarchy shared across the package."""


class CondensetError(Exception):
    """Base class for all errors raised by condenset."""


class ShapeError(CondensetError, ValueError):
    """Array dimensions or extents are inconsistent with an operation."""


class ConfigError(CondensetError, ValueError):
    """A configuration value is missing, malformed, or out of range."""


class DataFormatError(CondensetError, ValueError):
    """A file on disk does not match its declared binary/JSON format."""


class GraphError(CondensetError, RuntimeError):
    """Misuse of the autodiff tape (non-scalar loss, double backward)."""


class NonFiniteError(CondensetError, ArithmeticError):
    """A NaN or Inf was produced while debug verification is enabled."""
