"""Exception hierarchy shared by every module."""


class LinAttnError(Exception):
    """Base class for all package errors."""


class ShapeError(LinAttnError, ValueError):
    pass


class ConfigError(LinAttnError, ValueError):
    pass


class NumericalError(LinAttnError, ArithmeticError):
    pass


class StateError(LinAttnError, RuntimeError):
    pass


class FormatError(LinAttnError, ValueError):
    """Malformed LMAT payload."""
