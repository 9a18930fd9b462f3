"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
DivergenceError -> 4.
"""


class PMFFNNError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(PMFFNNError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(PMFFNNError, ValueError):
    """An argument is outside the domain an operation is defined on."""


class StateError(PMFFNNError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class ConfigError(PMFFNNError, ValueError):
    """Invalid architecture or training configuration.

    ``path`` names the offending field, e.g. ``pathway.hidden_dim``.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DataError(PMFFNNError):
    """Dataset could not be loaded or does not fit the model."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class EmptyFileError(DataError):
    pass


class CellParseError(DataError, ValueError):
    """A CSV cell is not a decimal number (or is empty)."""

    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")


class MissingColumnError(DataError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing column"


class DivergenceError(PMFFNNError, ArithmeticError):
    """Training produced a non-finite loss."""
