"""Exception types shared across the pipeline stages."""


class NoxScreenError(Exception):
    """Base class for all package errors."""


class DataError(NoxScreenError):
    """Input data cannot be used (maps to CLI exit code 2)."""


class ConfigError(NoxScreenError):
    """Invalid configuration (maps to CLI exit code 1)."""


class NonFiniteInput(DataError, ValueError):
    pass


class EmptyFile(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"required column {column!r} not found in header")
        self.column = column


class DegenerateTrip(DataError):
    pass


class ZeroFuelRate(DataError, ZeroDivisionError):
    pass


class ZeroDenominator(DataError, ZeroDivisionError):
    pass


class EmptyInput(DataError):
    pass


class InsufficientData(DataError):
    pass


class ZeroDistance(DataError, ZeroDivisionError):
    pass


class NonPositiveFC(DataError, ValueError):
    pass


class UnscreenableBin(DataError):
    """Raised for braking or idle passes, whose plumes are not valid samples."""

    def __init__(self, bin_id):
        super().__init__(f"pass classified as {bin_id.name}; not screenable")
        self.bin = bin_id


class OutOfDomain(DataError, ValueError):
    pass


class InvalidSpec(ConfigError):
    pass
