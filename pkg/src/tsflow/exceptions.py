"""Exception hierarchy shared across the library."""


class TsflowError(Exception):
    """Base class for all library errors."""


class ShapeError(TsflowError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(TsflowError):
    """A static configuration value is invalid (e.g. even kernel width)."""


class ContractError(TsflowError):
    """An API precondition was violated by the caller."""


class DataError(TsflowError):
    """Input data is malformed or insufficient."""


class NumericError(TsflowError):
    """A computation produced non-finite values."""


class IntegrityError(TsflowError):
    """A persisted artifact failed its integrity check."""
