"""Exception types shared across the package."""


class UnreflectError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(UnreflectError, ValueError):
    """Operand shapes violate an operation's contract."""


class ConfigError(UnreflectError, ValueError):
    """Bad or unknown configuration key/value."""


class DegenerateFitError(UnreflectError, ArithmeticError):
    """Least-squares fit is ill-posed (near-constant channel)."""


class InvertibilityError(UnreflectError, ArithmeticError):
    """A channel scale dipped below its floor, so its inverse is unsafe."""


class MissingGradError(UnreflectError, RuntimeError):
    """Optimizer stepped a parameter whose gradient was never populated."""
