"""Exception hierarchy shared by the library and the CLI."""


class PmiError(Exception):
    """Base class for all errors raised by pmiprint."""

    exit_code = 1
    code = "ERROR"


class ConfigError(PmiError, ValueError):
    exit_code = 2
    code = "CONFIG"


class CapacityError(PmiError, ValueError):
    """A member or non-member pool is too small for the requested trial."""

    exit_code = 3
    code = "CAPACITY"


class FormatError(PmiError, OSError):
    """A data or model file is malformed, truncated or of the wrong version."""

    exit_code = 4
    code = "IO"


class DivergenceError(PmiError, ArithmeticError):
    exit_code = 5
    code = "DIVERGENCE"
