"""Exception hierarchy shared by every crglab module."""


class CrgError(Exception):
    """Base class for all errors raised by crglab."""


class ShapeError(CrgError, ValueError):
    pass


class ConfigError(CrgError, ValueError):
    pass


class InputError(CrgError, ValueError):
    pass


class StateError(CrgError, RuntimeError):
    pass


class NumericalError(CrgError, FloatingPointError):
    """A kernel produced NaN or Inf."""


class InsufficientDataError(CrgError, ValueError):
    pass
