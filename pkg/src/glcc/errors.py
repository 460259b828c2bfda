"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GLCCError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(GLCCError, ValueError):
    """Invalid parameter value or mismatched configuration."""

    exit_code = 2
    kind = "config_error"


# Parameter errors (k out of range, r <= 1, ...) are configuration problems.
ParameterError = ConfigError


class DataError(GLCCError, ValueError):
    """Malformed, misaligned or non-finite input data."""

    exit_code = 3
    kind = "data_error"


class NumericalError(GLCCError, ArithmeticError):
    """Non-finite intermediate values, singular systems, or a violated descent guarantee."""

    exit_code = 4
    kind = "numerical_error"
