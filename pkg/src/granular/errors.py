"""Exception hierarchy. Each class maps to one CLI exit code."""


class GranularError(Exception):
    exit_code = 1


class ConfigError(GranularError, ValueError):
    exit_code = 2


class DataError(GranularError, ValueError):
    exit_code = 3


class NumericError(GranularError, ArithmeticError):
    exit_code = 4
