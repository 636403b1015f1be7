"""Exception types raised across the package."""


class ScrlError(Exception):
    """Base class for all package errors."""


class ShapeError(ScrlError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ScrlError, ValueError):
    """A hyperparameter or argument is outside its valid range."""


class ValidationError(ScrlError, ValueError):
    """Input data violates a format or consistency rule."""


class NumericalError(ScrlError, FloatingPointError):
    """A computation produced NaN or Inf."""


class CheckpointError(ScrlError, ValueError):
    """A checkpoint file is malformed or incompatible with a dataset."""
