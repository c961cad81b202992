class HyperRecError(Exception):
    """Base class for errors caused by bad input, data or configuration."""


class ConfigError(HyperRecError):
    pass


class DataError(HyperRecError):
    pass


class DomainError(HyperRecError, ValueError):
    """A point lies on or outside the ball, or an input is not finite."""


class DimensionError(HyperRecError, ValueError):
    pass


class SamplingError(HyperRecError):
    pass


class CheckpointError(HyperRecError):
    pass


class ProtocolMismatchError(HyperRecError):
    pass


class NonFiniteGradientError(HyperRecError):

    def __init__(self, table: str, row: int):
        self.table = table
        self.row = row
        super().__init__(f"non-finite gradient in table '{table}' at row {row}; batch rejected")


USER_ERROR_EXIT = 1
INTERNAL_ERROR_EXIT = 2
