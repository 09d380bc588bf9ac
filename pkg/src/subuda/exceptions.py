"""Exception types raised by subuda."""


class SubUDAError(Exception):
    """Base class for all package errors."""


class ShapeError(SubUDAError, ValueError):
    """Array dimensions do not match what an operation expects."""


class ValidationError(SubUDAError, ValueError):
    """A configuration or dataset description violates its invariants."""


class UsageError(SubUDAError, RuntimeError):
    """An API was called out of order or with stale state."""


class StateError(SubUDAError, RuntimeError):
    """The current state cannot support the requested computation."""


class NonFiniteLossError(SubUDAError, FloatingPointError):
    """A training loss became NaN or infinite."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
