"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Malformed input data (sessions, files, datasets)."""


class ConfigError(ValueError):
    """Invalid or unsatisfiable configuration."""


class NumericError(ArithmeticError):
    """A numerical routine failed (non-finite loss, failed decomposition)."""
