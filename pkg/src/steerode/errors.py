"""Exception hierarchy shared by every module."""


class SteerError(Exception):
    """Base class for all package errors."""


class ConfigError(SteerError, ValueError):
    """Invalid configuration value or shape mismatch."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ContractError(SteerError, ValueError):
    """A caller violated an operation's precondition."""


class NumericError(SteerError, FloatingPointError):
    """Non-finite value produced inside a network evaluation."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class DivergenceError(SteerError, RuntimeError):
    """ODE integration blew up or exhausted its step budget."""

    def __init__(self, message, t=None, h=None, step=None):
        super().__init__(message)
        self.t = t
        self.h = h
        self.step = step


class SamplerDegenerateError(SteerError, ValueError):
    """A sampled end time fell at or before the start time."""


class GridRangeError(SteerError, ValueError):
    """Evaluation point lies outside the representable grid extension."""
