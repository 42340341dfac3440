"""Exception taxonomy shared across the package.

The CLI maps these to exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Everything else is a bug.
"""


class RehearsalMemoryError(Exception):
    """Base class for all package errors."""


class ShapeError(RehearsalMemoryError, ValueError):
    """Operands have incompatible or invalid shapes."""


class ConfigError(RehearsalMemoryError, ValueError):
    """A configuration value violates its documented constraints."""


class DataError(RehearsalMemoryError, ValueError):
    """Dataset generation, parsing, or I/O failed."""


class NumericError(RehearsalMemoryError, ArithmeticError):
    """A non-finite value appeared where the math requires finite input."""
