"""Exception types raised across the package."""


class GswaError(Exception):
    """Base class for all package errors."""


class DimensionError(GswaError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(GswaError, ValueError):
    """A configuration value violates its invariants."""


class InputError(GswaError, ValueError):
    """Input data (an image, a tile batch) is unusable."""


class NumericInputError(GswaError, ValueError):
    """Input is numerically degenerate (e.g. a zero-norm vector)."""


class InfeasibleRequest(GswaError, ValueError):
    """A well-formed request that cannot be satisfied for this input."""


class ParamFormatError(GswaError):
    """A parameter file is missing, corrupted or inconsistent."""


class TapeError(GswaError, RuntimeError):
    """Misuse of the autodiff tape."""
