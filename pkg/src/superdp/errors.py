"""Exception types. CLI exit codes hang off these classes."""


class SuperDPError(Exception):
    exit_code = 1


class ConfigError(SuperDPError, ValueError):
    exit_code = 2


class InputError(SuperDPError, ValueError):
    exit_code = 2


class DimensionError(InputError):
    pass


class UsageError(SuperDPError, RuntimeError):
    exit_code = 2


class DataError(SuperDPError, ValueError):
    exit_code = 3


class FormatError(DataError):
    """Malformed IDX container."""


class NumericalError(SuperDPError, ArithmeticError):
    exit_code = 4
