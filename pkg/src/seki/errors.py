"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment or solver configuration (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """A run produced non-finite values (CLI exit code 3)."""
